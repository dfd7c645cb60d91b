//! The risk-neutral and risk-sensitive unnormalized filter recursions and the
//! estimators read off from them.
//!
//! Both recursions are implemented in the factored form `ϱ' = V± H V±*` with
//! `V± = I + λ² M∘ ± λ M+`, which equals the expanded `L̄ λ² + J̄ Δy` update
//! exactly and keeps every block positive semidefinite. The expanded forms are
//! kept as [`expanded_rn_update`] and [`expanded_rs_update`] for cross-checks.

use crate::error::{Error, Result};
use crate::matcore::{eig_hermitian2, is_hermitian2, re, trace_product2, Mat2, TOL_HERM};
use crate::model::{BlockDensityMatrix, InteractionCoefficients, Outcome, ParameterEnsemble};

const RESCALE_LOW: f64 = 1e-250;
const RESCALE_HIGH: f64 = 1e250;
const DEGENERATE_TRACE: f64 = 1e-300;

/// Points of the coarse grid scanned before golden-section refinement.
pub const ARGMIN_GRID_POINTS: usize = 201;
/// Final bracket width of the golden-section refinement.
pub const ARGMIN_TOL: f64 = 1e-8;

/// Risk-sensitivity weights: `mu1` on the running cost, `mu2` on the terminal cost.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RiskParams {
    pub mu1: f64,
    pub mu2: f64,
}

impl RiskParams {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        if !(mu1 >= 0.0 && mu1.is_finite()) || !(mu2 > 0.0 && mu2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "risk parameters need mu1 >= 0 and mu2 > 0, got ({mu1}, {mu2})"
            )));
        }
        Ok(Self { mu1, mu2 })
    }
}

/// The estimated observable `X_e` together with its eigendecomposition, so
/// that `e^{c K(u)}` with `K(u) = (X_e - u)^2` is a diagonal rescaling.
#[derive(Clone, Debug)]
pub struct Observable {
    x: Mat2,
    eigenvalues: [f64; 2],
    eigenvectors: Mat2,
}

impl Observable {
    pub fn new(x: Mat2) -> Result<Self> {
        if !is_hermitian2(&x, TOL_HERM) {
            return Err(Error::InvalidInput("observable must be Hermitian".into()));
        }
        let (eigenvalues, eigenvectors) = eig_hermitian2(&x)?;
        Ok(Self { x, eigenvalues, eigenvectors })
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.x
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        self.eigenvalues
    }

    /// `K(u) = (X_e - u I)^2`.
    pub fn cost_operator(&self, u: f64) -> Mat2 {
        let d = self.x - Mat2::identity() * re(u);
        d * d
    }

    /// `e^{c K(u)}`.
    pub fn exp_cost(&self, c: f64, u: f64) -> Mat2 {
        self.spectral(|x| (c * (x - u) * (x - u)).exp())
    }

    fn spectral(&self, f: impl Fn(f64) -> f64) -> Mat2 {
        let v = &self.eigenvectors;
        let d = Mat2::new(re(f(self.eigenvalues[0])), re(0.0), re(0.0), re(f(self.eigenvalues[1])));
        v * d * v.adjoint()
    }

    /// Diagonal of `V* ρ V` in the eigenbasis of `X_e`.
    pub fn eigen_weights(&self, rho: &Mat2) -> [f64; 2] {
        let t = self.eigenvectors.adjoint() * rho * self.eigenvectors;
        [t[(0, 0)].re, t[(1, 1)].re]
    }
}

/// An unnormalized information state at step `step`.
///
/// `log_scale` records the logarithm of any common factor divided out to keep
/// the blocks in floating-point range; only ratios are ever consumed.
#[derive(Clone, Debug)]
pub struct FilterState {
    pub state: BlockDensityMatrix,
    pub step: usize,
    pub last_estimate: Option<f64>,
    pub log_scale: f64,
}

impl FilterState {
    pub fn new(state: BlockDensityMatrix) -> Result<Self> {
        if !(state.total_trace() > 0.0) {
            return Err(Error::DegenerateState("initial state has zero trace".into()));
        }
        Ok(Self { state, step: 0, last_estimate: None, log_scale: 0.0 })
    }

    pub fn blocks(&self) -> &[Mat2] {
        self.state.blocks()
    }

    pub fn total_trace(&self) -> f64 {
        self.state.total_trace()
    }

    fn advance(&self, blocks: Vec<Mat2>) -> Self {
        let mut next = Self {
            state: BlockDensityMatrix::from_blocks_unchecked(blocks),
            step: self.step + 1,
            last_estimate: self.last_estimate,
            log_scale: self.log_scale,
        };
        let t = next.state.total_trace();
        if t > 0.0 && !(RESCALE_LOW..=RESCALE_HIGH).contains(&t) {
            next.state = next.state.scaled(1.0 / t);
            next.log_scale += t.ln();
        }
        next
    }
}

fn check_shape(s: &FilterState, c: &ParameterEnsemble) {
    assert_eq!(
        s.state.len(),
        c.len(),
        "filter state has {} blocks but the ensemble has {} members",
        s.state.len(),
        c.len()
    );
}

#[inline]
fn congruence(v: &Mat2, rho: &Mat2) -> Mat2 {
    v * rho * v.adjoint()
}

/// One step of the risk-neutral unnormalized filter.
pub fn rn_step(s: &FilterState, c: &ParameterEnsemble, dy: Outcome) -> FilterState {
    check_shape(s, c);
    let blocks = s
        .blocks()
        .iter()
        .zip(c.coeffs())
        .map(|(rho, k)| congruence(&k.step_operator(dy), rho))
        .collect();
    s.advance(blocks)
}

/// Weighting `H(ϱ, u) = e^{μ1 λ² K(u)/2} ϱ e^{μ1 λ² K(u)/2}`.
pub fn risk_weight(rho: &Mat2, rp: &RiskParams, obs: &Observable, lambda2: f64, u: f64) -> Mat2 {
    let w = obs.exp_cost(0.5 * rp.mu1 * lambda2, u);
    w * rho * w
}

/// One step of the risk-sensitive unnormalized filter driven by the estimate
/// `u_prev` emitted at the previous step. The very first step carries no risk
/// weight.
pub fn rs_step(
    s: &FilterState,
    c: &ParameterEnsemble,
    rp: &RiskParams,
    obs: &Observable,
    u_prev: f64,
    dy: Outcome,
) -> FilterState {
    check_shape(s, c);
    let lambda2 = c.lambda() * c.lambda();
    let weight = (s.step > 0 && rp.mu1 != 0.0).then(|| obs.exp_cost(0.5 * rp.mu1 * lambda2, u_prev));
    let blocks = s
        .blocks()
        .iter()
        .zip(c.coeffs())
        .map(|(rho, k)| {
            let h = match &weight {
                Some(w) => w * rho * w,
                None => *rho,
            };
            congruence(&k.step_operator(dy), &h)
        })
        .collect();
    s.advance(blocks)
}

/// `ϱ + L̄(ϱ) λ² + J̄(ϱ) Δy` written out term by term.
pub fn expanded_rn_update(rho: &Mat2, k: &InteractionCoefficients, dy: Outcome) -> Mat2 {
    expanded_rs_update(rho, rho, k, dy)
}

/// `ϱ + L̄^μ(ϱ, u) λ² + J̄^μ(ϱ, u) Δy` written out term by term, with `h` the
/// already weighted `H(ϱ, u)`.
pub fn expanded_rs_update(rho: &Mat2, h: &Mat2, k: &InteractionCoefficients, dy: Outcome) -> Mat2 {
    let l2 = re(k.lambda2());
    let inv_l2 = re(1.0 / k.lambda2());
    let (mp, mc) = (&k.m_plus, &k.m_circ);
    let lbar = mp * h * mp.adjoint()
        + mc * h * mc.adjoint() * l2
        + mc * h
        + h * mc.adjoint()
        + (h - rho) * inv_l2;
    let jbar = mc * h * mp.adjoint() * l2 + mp * h * mc.adjoint() * l2 + mp * h + h * mp.adjoint();
    rho + lbar * l2 + jbar * re(dy.value(k.lambda))
}

/// Normalized estimate `Σ Tr(ϱ_i X) / Σ Tr(ϱ_i)`.
pub fn estimate(s: &FilterState, x: &Mat2) -> Result<f64> {
    estimate_blocks(&s.state, x)
}

pub fn estimate_blocks(state: &BlockDensityMatrix, x: &Mat2) -> Result<f64> {
    let t = state.total_trace();
    if !(t > DEGENERATE_TRACE) {
        return Err(Error::DegenerateState(format!("total trace {t}")));
    }
    let num: f64 = state.blocks().iter().map(|b| trace_product2(b, x)).sum();
    Ok(num / t)
}

/// Terminal risk-sensitive cost `Tr[ϱ e^{μ2 K(u)}]` summed over blocks.
pub fn terminal_cost(s: &FilterState, rp: &RiskParams, obs: &Observable, u: f64) -> f64 {
    let w = obs.eigen_weights(&s.state.system_marginal());
    w.iter()
        .zip(obs.eigenvalues())
        .map(|(wk, x)| wk * (rp.mu2 * (x - u) * (x - u)).exp())
        .sum()
}

/// Minimizer over real `u` of `Tr[ϱ^μ e^{μ2 (X_e - u)^2}]`.
pub fn suboptimal_estimate(s: &FilterState, rp: &RiskParams, obs: &Observable) -> Result<f64> {
    let t = s.total_trace();
    if !(t > DEGENERATE_TRACE) {
        return Err(Error::DegenerateState(format!("total trace {t}")));
    }
    let marginal = s.state.system_marginal() / re(t);
    Ok(argmin_exp_cost(obs.eigen_weights(&marginal), obs.eigenvalues(), rp.mu2))
}

/// Minimizes `Σ_k w_k e^{μ2 (x_k - u)^2}` over `u` in `[min x - 1, max x + 1]`.
///
/// The objective is evaluated as `Σ w_k expm1(μ2 (x_k - u)^2) / μ2`, which has
/// the same minimizer and stays well conditioned as `μ2 → 0`.
pub fn argmin_exp_cost(weights: [f64; 2], spectrum: [f64; 2], mu2: f64) -> f64 {
    let f = |u: f64| {
        weights
            .iter()
            .zip(spectrum)
            .map(|(w, x)| w * (mu2 * (x - u) * (x - u)).exp_m1())
            .sum::<f64>()
            / mu2
    };
    let lo = spectrum[0].min(spectrum[1]) - 1.0;
    let hi = spectrum[0].max(spectrum[1]) + 1.0;
    let n = ARGMIN_GRID_POINTS;
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = 0;
    let mut best_val = f(lo);
    for i in 1..n {
        let v = f(lo + step * i as f64);
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    let a = lo + step * best.saturating_sub(1) as f64;
    let b = lo + step * (best + 1).min(n - 1) as f64;
    let u = golden_section(f, a, b, ARGMIN_TOL);
    let grid_u = lo + step * best as f64;
    if f(u) <= best_val {
        u
    } else {
        grid_u
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        // ties move the bracket left, toward the smaller u
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Risk-neutral estimates `π_l(X)`, `l = 1..N`, along a record.
pub fn run_risk_neutral(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    record: &[Outcome],
    x: &Mat2,
) -> Result<Vec<f64>> {
    let mut s = FilterState::new(initial.clone())?;
    record
        .iter()
        .map(|&dy| {
            s = rn_step(&s, c, dy);
            estimate(&s, x)
        })
        .collect()
}

/// Suboptimal risk-sensitive estimates `u_l`, `l = 1..N`, along a record; each
/// estimate drives the next risk-sensitive step.
pub fn run_suboptimal(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    rp: &RiskParams,
    obs: &Observable,
    record: &[Outcome],
) -> Result<Vec<f64>> {
    let mut s = FilterState::new(initial.clone())?;
    let mut out = Vec::with_capacity(record.len());
    for &dy in record {
        let u_prev = s.last_estimate.unwrap_or(0.0);
        s = rs_step(&s, c, rp, obs, u_prev, dy);
        let u = suboptimal_estimate(&s, rp, obs)?;
        s.last_estimate = Some(u);
        out.push(u);
    }
    Ok(out)
}
