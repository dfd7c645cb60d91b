//! Physical models: slice unitaries and their coefficient decomposition,
//! parameter ensembles, and the block-diagonal states they act on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    is_hermitian2, is_psd2, max_abs2, re, real2, sigma_minus, sigma_plus, sigma_y, sigma_z,
    trace2, ComplexMatrix, Mat2, C64, TOL_HERM, ZERO,
};

/// One measured quadrature outcome, `+λ` or `-λ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    pub fn sign(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }

    /// The increment `Δy = ±λ`.
    pub fn value(self, lambda: f64) -> f64 {
        self.sign() * lambda
    }
}

/// System operators of the interaction Hamiltonian with one field slice.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    /// Couples to the photon-number increment; Hermitian.
    pub l1: Mat2,
    /// Couples to the creation increment (its adjoint to annihilation).
    pub l2: Mat2,
    /// Couples to the time increment; Hermitian.
    pub l3: Mat2,
    /// Square root of the slice duration.
    pub lambda: f64,
}

impl HamiltonianSpec {
    pub fn new(l1: Mat2, l2: Mat2, l3: Mat2, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        if !is_hermitian2(&l1, TOL_HERM) || !is_hermitian2(&l3, TOL_HERM) {
            return Err(Error::InvalidInput("L1 and L3 must be Hermitian".into()));
        }
        Ok(Self { l1, l2, l3, lambda })
    }

    /// Dispersive coupling `L2 = i g σz` with interaction strength `g`.
    pub fn dispersive(g: f64, lambda: f64) -> Result<Self> {
        Self::new(Mat2::zeros(), sigma_z() * C64::new(0.0, g), Mat2::zeros(), lambda)
    }

    /// Spontaneous emission `L2 = i e σ-` with emission rate `e`.
    pub fn spontaneous(e: f64, lambda: f64) -> Result<Self> {
        Self::new(Mat2::zeros(), sigma_minus() * C64::new(0.0, e), Mat2::zeros(), lambda)
    }

    /// The 4×4 Hermitian generator on system ⊗ slice; the slice basis is
    /// (excited, vacuum).
    pub fn generator(&self) -> ComplexMatrix {
        let lam = self.lambda;
        let number = ComplexMatrix::from(real2(1.0, 0.0, 0.0, 0.0));
        let create = ComplexMatrix::from(sigma_plus() * re(lam));
        let annihilate = ComplexMatrix::from(sigma_minus() * re(lam));
        let time = ComplexMatrix::identity(2).scale(re(lam * lam));
        let terms = [
            ComplexMatrix::from(self.l1).kron(&number),
            ComplexMatrix::from(self.l2).kron(&create),
            ComplexMatrix::from(self.l2.adjoint()).kron(&annihilate),
            ComplexMatrix::from(self.l3).kron(&time),
        ];
        terms.iter().fold(ComplexMatrix::zeros(4), |acc, t| &acc + t)
    }
}

/// The coefficients `M±, M+, M-, M∘` of one slice unitary
/// `I + M±⊗ΔΛ + M+⊗ΔA* + M-⊗ΔA + M∘⊗Δt`.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionCoefficients {
    pub m_pm: Mat2,
    pub m_plus: Mat2,
    pub m_minus: Mat2,
    pub m_circ: Mat2,
    pub lambda: f64,
}

impl InteractionCoefficients {
    /// No interaction: the slice unitary is the identity.
    pub fn zero(lambda: f64) -> Self {
        Self {
            m_pm: Mat2::zeros(),
            m_plus: Mat2::zeros(),
            m_minus: Mat2::zeros(),
            m_circ: Mat2::zeros(),
            lambda,
        }
    }

    pub fn dispersive_closed_form(g: f64, lambda: f64) -> Self {
        let (s, c) = (g * lambda).sin_cos();
        Self {
            m_pm: Mat2::zeros(),
            m_plus: sigma_z() * re(s / lambda),
            m_minus: sigma_z() * re(-s / lambda),
            m_circ: Mat2::identity() * re((c - 1.0) / (lambda * lambda)),
            lambda,
        }
    }

    pub fn spontaneous_closed_form(e: f64, lambda: f64) -> Self {
        let (s, c) = (e * lambda).sin_cos();
        Self {
            m_pm: sigma_z() * re(1.0 - c),
            m_plus: sigma_minus() * re(s / lambda),
            m_minus: sigma_plus() * re(-s / lambda),
            m_circ: sigma_plus() * sigma_minus() * re((c - 1.0) / (lambda * lambda)),
            lambda,
        }
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda * self.lambda
    }

    /// Assembles the 4×4 slice unitary on system ⊗ slice.
    pub fn slice_unitary(&self) -> ComplexMatrix {
        let lam = self.lambda;
        let blocks = [
            [Mat2::identity() + self.m_pm + self.m_circ * re(lam * lam), self.m_plus * re(lam)],
            [self.m_minus * re(lam), Mat2::identity() + self.m_circ * re(lam * lam)],
        ];
        // row (i, a) = 2i + a with i the system index and a the slice index
        ComplexMatrix::from_fn(4, |r, c| blocks[r % 2][c % 2][(r / 2, c / 2)])
    }

    /// `‖M∘ + M∘* + M+*M+ + λ² M∘*M∘‖`, which vanishes for a unitary slice.
    pub fn unitarity_relation_residual(&self) -> f64 {
        let mc = self.m_circ;
        let mp = self.m_plus;
        let r = mc + mc.adjoint() + mp.adjoint() * mp + mc.adjoint() * mc * re(self.lambda2());
        max_abs2(&r)
    }

    /// The factored one-step operator `V± = I + λ² M∘ ± λ M+`.
    pub fn step_operator(&self, outcome: Outcome) -> Mat2 {
        Mat2::identity() + self.m_circ * re(self.lambda2()) + self.m_plus * re(outcome.value(self.lambda))
    }
}

/// Exponentiates the slice generator and reads off the four coefficients.
pub fn build_interaction_coeffs(spec: &HamiltonianSpec) -> Result<InteractionCoefficients> {
    let lam = spec.lambda;
    let h = spec.generator();
    let unitary = h.eig_hermitian()?.apply_complex(|x| C64::new(0.0, -x).exp());
    let block = |a: usize, b: usize| {
        Mat2::new(
            unitary.get(a, b),
            unitary.get(a, 2 + b),
            unitary.get(2 + a, b),
            unitary.get(2 + a, 2 + b),
        )
    };
    let (b00, b01, b10, b11) = (block(0, 0), block(0, 1), block(1, 0), block(1, 1));
    let coeffs = InteractionCoefficients {
        m_pm: b00 - b11,
        m_plus: b01 / re(lam),
        m_minus: b10 / re(lam),
        m_circ: (b11 - Mat2::identity()) / re(lam * lam),
        lambda: lam,
    };
    let residual = (&coeffs.slice_unitary() - &unitary).max_abs();
    if residual > 1e-10 {
        return Err(Error::ModelConstruction(format!(
            "coefficient decomposition residual {residual:e}"
        )));
    }
    Ok(coeffs)
}

/// `‖M_l* M_l - I‖` for the assembled slice unitary.
pub fn check_unitarity(c: &InteractionCoefficients) -> f64 {
    let m = c.slice_unitary();
    (&(&m.adjoint() * &m) - &ComplexMatrix::identity(4)).max_abs()
}

/// A finite set of candidate values of an unknown scalar parameter with the
/// coefficients each value induces.
#[derive(Clone, Debug)]
pub struct ParameterEnsemble {
    values: Vec<f64>,
    coeffs: Vec<InteractionCoefficients>,
}

impl ParameterEnsemble {
    pub fn new(values: Vec<f64>, coeffs: Vec<InteractionCoefficients>) -> Result<Self> {
        if values.is_empty() || values.len() != coeffs.len() {
            return Err(Error::InvalidInput(
                "ensemble needs one coefficient set per parameter value".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("parameter values must be strictly increasing".into()));
        }
        let lam = coeffs[0].lambda;
        if coeffs.iter().any(|c| c.lambda != lam) {
            return Err(Error::InvalidInput("ensemble members disagree on lambda".into()));
        }
        Ok(Self { values, coeffs })
    }

    /// Builds every member from its Hamiltonian.
    pub fn from_hamiltonians(
        values: Vec<f64>,
        spec: impl Fn(f64) -> Result<HamiltonianSpec>,
    ) -> Result<Self> {
        let coeffs = values
            .iter()
            .map(|&v| build_interaction_coeffs(&spec(v)?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values, coeffs)
    }

    pub fn single(value: f64, coeffs: InteractionCoefficients) -> Self {
        Self { values: vec![value], coeffs: vec![coeffs] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coeffs(&self) -> &[InteractionCoefficients] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.coeffs[0].lambda
    }

    /// Keeps the first `m` members.
    pub fn truncate(&self, m: usize) -> Self {
        Self {
            values: self.values[..m].to_vec(),
            coeffs: self.coeffs[..m].to_vec(),
        }
    }
}

/// A state on parameter ⊗ atom with no cross-parameter coherences, stored as
/// one (possibly unnormalized) 2×2 block per parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDensityMatrix {
    blocks: Vec<Mat2>,
}

impl BlockDensityMatrix {
    pub fn new(blocks: Vec<Mat2>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput("block state needs at least one block".into()));
        }
        if let Some(i) = blocks.iter().position(|b| !is_psd2(b)) {
            return Err(Error::InvalidInput(format!("block {i} is not Hermitian PSD")));
        }
        Ok(Self { blocks })
    }

    /// Blocks produced by the filter recursions; positivity holds by construction.
    pub(crate) fn from_blocks_unchecked(blocks: Vec<Mat2>) -> Self {
        Self { blocks }
    }

    /// `diag(weights) ⊗ system`.
    pub fn product(weights: &[f64], system: &Mat2) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidInput("parameter weights must be non-negative".into()));
        }
        Self::new(weights.iter().map(|&w| system * re(w)).collect())
    }

    pub fn single(block: Mat2) -> Result<Self> {
        Self::new(vec![block])
    }

    pub fn blocks(&self) -> &[Mat2] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks.iter().map(trace2).sum()
    }

    /// Per-block traces, i.e. the (unnormalized) marginal on the parameter.
    pub fn parameter_weights(&self) -> Vec<f64> {
        self.blocks.iter().map(trace2).collect()
    }

    /// Sum of the blocks: the marginal state of the atom.
    pub fn system_marginal(&self) -> Mat2 {
        self.blocks.iter().fold(Mat2::zeros(), |acc, b| acc + b)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { blocks: self.blocks.iter().map(|b| b * re(s)).collect() }
    }

    pub fn normalized(&self) -> Result<Self> {
        let t = self.total_trace();
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::DegenerateState(format!("total trace {t}")));
        }
        Ok(self.scaled(1.0 / t))
    }

    pub fn is_psd(&self) -> bool {
        self.blocks.iter().all(is_psd2)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks.iter().map(crate::matcore::min_eigenvalue2).fold(f64::INFINITY, f64::min)
    }

    /// The full 2m×2m matrix, parameter index major.
    pub fn to_full(&self) -> ComplexMatrix {
        let m = self.blocks.len();
        ComplexMatrix::from_fn(2 * m, |r, c| {
            if r / 2 == c / 2 {
                self.blocks[r / 2][(r % 2, c % 2)]
            } else {
                ZERO
            }
        })
    }

    pub fn truncate(&self, m: usize) -> Self {
        Self { blocks: self.blocks[..m].to_vec() }
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_trace() - 1.0).abs() <= 1e-10
    }
}

// ---------------------------------------------------------------------------
// The two example models and their densities.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dispersive,
    Spontaneous,
    Custom,
}

/// 2×2 complex matrix as rows of `[re, im]` pairs.
pub type JsonMat2 = [[[f64; 2]; 2]; 2];

pub fn mat2_from_json(m: &JsonMat2) -> Mat2 {
    let z = |i: usize, j: usize| C64::new(m[i][j][0], m[i][j][1]);
    Mat2::new(z(0, 0), z(0, 1), z(1, 0), z(1, 1))
}

pub fn mat2_to_json(m: &Mat2) -> JsonMat2 {
    let z = |i: usize, j: usize| [m[(i, j)].re, m[(i, j)].im];
    [[z(0, 0), z(0, 1)], [z(1, 0), z(1, 1)]]
}

/// The JSON model document.
///
/// For `custom` models the member Hamiltonian for parameter `p` is
/// `L1 = l1, L2 = p·l2, L3 = l3`, and `observable` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub lambda2: f64,
    pub param_values: Vec<f64>,
    pub true_weights: Vec<f64>,
    pub nominal_weights: Vec<f64>,
    pub true_system: JsonMat2,
    pub nominal_system: JsonMat2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<JsonMat2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<JsonMat2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<JsonMat2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l3: Option<JsonMat2>,
}

/// Everything a simulation needs: the ensemble, both initial states and the
/// estimated observable.
#[derive(Clone, Debug)]
pub struct ModelSetup {
    pub kind: ModelKind,
    pub ensemble: ParameterEnsemble,
    pub true_state: BlockDensityMatrix,
    pub nominal_state: BlockDensityMatrix,
    pub observable: Mat2,
}

pub const FIG1_TRUE_WEIGHTS: [f64; 20] = [
    0.0, 0.01, 0.04, 0.1, 0.7, 0.1, 0.04, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0,
];

pub const FIG3_TRUE_WEIGHTS: [f64; 20] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.01, 0.04, 0.9, 0.04,
    0.01, 0.0,
];

pub const DEFAULT_LAMBDA2: f64 = 0.001;

/// `g_i = 0.4 + 0.03 i`, `i = 1..20`.
pub fn fig1_parameter_values() -> Vec<f64> {
    (1..=20).map(|i| 0.4 + 0.03 * i as f64).collect()
}

/// `e_i = 0.2 + 0.04 i`, `i = 1..20`.
pub fn fig3_parameter_values() -> Vec<f64> {
    (1..=20).map(|i| 0.2 + 0.04 * i as f64).collect()
}

fn plus_state() -> Mat2 {
    real2(0.5, 0.5, 0.5, 0.5)
}

/// Nominal parameter weights interpolating between the true dispersive
/// distribution (`beta = 0`) and the uniform one (`beta = 1`).
pub fn beta_parameter_weights(beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut w = vec![0.05 * beta; 20];
    w[1] = 0.04 * beta + 0.01;
    w[7] = w[1];
    w[2] = 0.01 * beta + 0.04;
    w[6] = w[2];
    w[3] = -0.05 * beta + 0.1;
    w[5] = w[3];
    w[4] = -0.65 * beta + 0.7;
    Ok(w)
}

pub fn beta_system_block(beta: f64) -> Mat2 {
    let off = 0.5 - 0.25 * beta;
    real2(0.5, off, off, 0.5)
}

impl ModelSpec {
    pub fn fig1(lambda2: f64) -> Self {
        Self::fig1_beta(lambda2, 1.0).expect("beta = 1 is in range")
    }

    pub fn fig1_beta(lambda2: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            model: ModelKind::Dispersive,
            lambda2,
            param_values: fig1_parameter_values(),
            true_weights: FIG1_TRUE_WEIGHTS.to_vec(),
            nominal_weights: beta_parameter_weights(beta)?,
            true_system: mat2_to_json(&plus_state()),
            nominal_system: mat2_to_json(&beta_system_block(beta)),
            observable: None,
            l1: None,
            l2: None,
            l3: None,
        })
    }

    pub fn fig3(lambda2: f64) -> Self {
        Self {
            model: ModelKind::Spontaneous,
            lambda2,
            param_values: fig3_parameter_values(),
            true_weights: FIG3_TRUE_WEIGHTS.to_vec(),
            nominal_weights: vec![1.0 / 20.0; 20],
            true_system: mat2_to_json(&plus_state()),
            nominal_system: mat2_to_json(&plus_state()),
            observable: None,
            l1: None,
            l2: None,
            l3: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<ModelSetup> {
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Config(format!("lambda2 must be positive, got {}", self.lambda2)));
        }
        let m = self.param_values.len();
        if self.true_weights.len() != m || self.nominal_weights.len() != m {
            return Err(Error::Config(
                "true_weights and nominal_weights must match param_values in length".into(),
            ));
        }
        let lambda = self.lambda2.sqrt();
        let (ensemble, observable) = match self.model {
            ModelKind::Dispersive => (
                ParameterEnsemble::from_hamiltonians(self.param_values.clone(), |g| {
                    HamiltonianSpec::dispersive(g, lambda)
                })?,
                sigma_z(),
            ),
            ModelKind::Spontaneous => (
                ParameterEnsemble::from_hamiltonians(self.param_values.clone(), |e| {
                    HamiltonianSpec::spontaneous(e, lambda)
                })?,
                sigma_y(),
            ),
            ModelKind::Custom => {
                let get = |m: &Option<JsonMat2>, name: &str| {
                    m.as_ref()
                        .map(mat2_from_json)
                        .ok_or_else(|| Error::Config(format!("custom model requires `{name}`")))
                };
                let (l1, l2, l3) = (get(&self.l1, "l1")?, get(&self.l2, "l2")?, get(&self.l3, "l3")?);
                let ensemble = ParameterEnsemble::from_hamiltonians(self.param_values.clone(), |p| {
                    HamiltonianSpec::new(l1, l2 * re(p), l3, lambda)
                })?;
                (ensemble, get(&self.observable, "observable")?)
            }
        };
        let observable = match (&self.observable, self.model) {
            (Some(o), ModelKind::Dispersive | ModelKind::Spontaneous) => mat2_from_json(o),
            _ => observable,
        };
        if !is_hermitian2(&observable, TOL_HERM) {
            return Err(Error::Config("observable must be Hermitian".into()));
        }
        let true_state =
            BlockDensityMatrix::product(&self.true_weights, &mat2_from_json(&self.true_system))?;
        let nominal_state =
            BlockDensityMatrix::product(&self.nominal_weights, &mat2_from_json(&self.nominal_system))?;
        for (name, s) in [("true", &true_state), ("nominal", &nominal_state)] {
            if !s.is_normalized() {
                return Err(Error::Config(format!(
                    "{name} density has total trace {}, expected 1",
                    s.total_trace()
                )));
            }
        }
        Ok(ModelSetup { kind: self.model, ensemble, true_state, nominal_state, observable })
    }
}

/// Dispersive-experiment densities and the ensemble `g_i = 0.4 + 0.03 i`.
pub fn build_true_nominal_fig1(
    lambda2: f64,
) -> Result<(BlockDensityMatrix, BlockDensityMatrix, ParameterEnsemble)> {
    let s = ModelSpec::fig1(lambda2).build()?;
    Ok((s.true_state, s.nominal_state, s.ensemble))
}

/// The `beta`-family nominal density of the dispersive example.
pub fn build_beta_nominal(beta: f64) -> Result<BlockDensityMatrix> {
    BlockDensityMatrix::product(&beta_parameter_weights(beta)?, &beta_system_block(beta))
}

/// Spontaneous-emission densities and the ensemble `e_i = 0.2 + 0.04 i`.
pub fn build_true_nominal_fig3(
    lambda2: f64,
) -> Result<(BlockDensityMatrix, BlockDensityMatrix, ParameterEnsemble)> {
    let s = ModelSpec::fig3(lambda2).build()?;
    Ok((s.true_state, s.nominal_state, s.ensemble))
}
