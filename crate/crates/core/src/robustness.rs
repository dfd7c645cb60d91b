//! Quantum relative entropy, the variational duality behind the robust error
//! bound, the Golden–Thompson inequality, and the per-step conditional error
//! bound.

use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::{FilterState, Observable, RiskParams};
use crate::matcore::{eig_hermitian2, re, trace_product2, ComplexMatrix, Mat2, C64, TOL_SUPP_REL};
use crate::model::BlockDensityMatrix;
use crate::sampler::rng_from_seed;

const NORM_TOL: f64 = 1e-8;

/// Relative entropy in nats. An explicit flag marks the `+∞` case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyResult {
    /// `f64::INFINITY` whenever `is_infinite` is set.
    pub value: f64,
    pub is_infinite: bool,
    /// Mass of `ρ` outside the support of `ρ'`.
    pub support_defect: f64,
}

impl EntropyResult {
    fn finite(value: f64, support_defect: f64) -> Self {
        Self { value, is_infinite: false, support_defect }
    }

    fn infinite(support_defect: f64) -> Self {
        Self { value: f64::INFINITY, is_infinite: true, support_defect }
    }

    pub fn finite_value(&self) -> Option<f64> {
        (!self.is_infinite).then_some(self.value)
    }
}

fn check_normalized(t: f64, what: &str) -> Result<()> {
    if (t - 1.0).abs() > NORM_TOL {
        return Err(Error::InvalidInput(format!("{what} has trace {t}, expected 1")));
    }
    Ok(())
}

fn xlogx(x: f64, tol: f64) -> f64 {
    if x > tol {
        x * x.ln()
    } else {
        0.0
    }
}

/// Accumulates `Tr ρ log ρ`, `Tr ρ log ρ'` and the defect of one 2×2 block.
fn block_terms(rho: &Mat2, rho_p: &Mat2, tol: f64) -> Result<(f64, f64, f64)> {
    let (ev, _) = eig_hermitian2(rho)?;
    let (evp, vp) = eig_hermitian2(rho_p)?;
    let self_term = ev.iter().map(|&x| xlogx(x, tol)).sum();
    let (mut cross, mut defect) = (0.0, 0.0);
    for j in 0..2 {
        let v = vp.column(j);
        let mass = (v.adjoint() * rho * v)[(0, 0)].re;
        if evp[j] > tol {
            cross += mass * evp[j].ln();
        } else {
            defect += mass;
        }
    }
    Ok((self_term, cross, defect))
}

fn finish(self_term: f64, cross: f64, defect: f64, tol: f64) -> EntropyResult {
    if defect > tol {
        EntropyResult::infinite(defect)
    } else {
        EntropyResult::finite(self_term - cross, defect)
    }
}

/// `R(ρ‖ρ')` for block-diagonal states, computed block by block.
pub fn relative_entropy_blocks(rho: &BlockDensityMatrix, rho_p: &BlockDensityMatrix) -> Result<EntropyResult> {
    if rho.len() != rho_p.len() {
        return Err(Error::InvalidInput(format!(
            "block counts differ: {} vs {}",
            rho.len(),
            rho_p.len()
        )));
    }
    check_normalized(rho.total_trace(), "rho")?;
    check_normalized(rho_p.total_trace(), "rho'")?;
    let scale = rho
        .blocks()
        .iter()
        .chain(rho_p.blocks())
        .map(|b| eig_hermitian2(b).map(|(e, _)| e[1]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let tol = TOL_SUPP_REL * scale;
    let (mut s, mut c, mut d) = (0.0, 0.0, 0.0);
    for (a, b) in rho.blocks().iter().zip(rho_p.blocks()) {
        let (s1, c1, d1) = block_terms(a, b, tol)?;
        s += s1;
        c += c1;
        d += d1;
    }
    Ok(finish(s, c, d, tol))
}

/// `R(ρ‖ρ')` for dense density matrices with the default support tolerance.
pub fn relative_entropy(rho: &ComplexMatrix, rho_p: &ComplexMatrix) -> Result<EntropyResult> {
    let tol = rho.support_tolerance()?.max(rho_p.support_tolerance()?);
    relative_entropy_with_tol(rho, rho_p, tol)
}

/// `R(ρ‖ρ')` for dense density matrices; eigenvalues at or below `tol_supp`
/// are outside the support.
pub fn relative_entropy_with_tol(rho: &ComplexMatrix, rho_p: &ComplexMatrix, tol_supp: f64) -> Result<EntropyResult> {
    if rho.dim() != rho_p.dim() {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    check_normalized(rho.trace().re, "rho")?;
    check_normalized(rho_p.trace().re, "rho'")?;
    let e = rho.eig_hermitian()?;
    let ep = rho_p.eig_hermitian()?;
    let self_term: f64 = e.eigenvalues.iter().map(|&x| xlogx(x, tol_supp)).sum();
    // diagonal of V'* ρ V'
    let t = &(&ep.eigenvectors.adjoint() * rho) * &ep.eigenvectors;
    let (mut cross, mut defect) = (0.0, 0.0);
    for (j, &mu) in ep.eigenvalues.iter().enumerate() {
        let mass = t.get(j, j).re;
        if mu > tol_supp {
            cross += mass * mu.ln();
        } else {
            defect += mass;
        }
    }
    Ok(finish(self_term, cross, defect, tol_supp))
}

/// `|R(a⊗b‖a'⊗b') − R(a‖a') − R(b‖b')|`; zero when both sides are `+∞`.
pub fn entropy_additivity_check(
    a: &ComplexMatrix,
    a_p: &ComplexMatrix,
    b: &ComplexMatrix,
    b_p: &ComplexMatrix,
) -> Result<f64> {
    let joint = relative_entropy(&a.kron(b), &a_p.kron(b_p))?;
    let ra = relative_entropy(a, a_p)?;
    let rb = relative_entropy(b, b_p)?;
    let split_inf = ra.is_infinite || rb.is_infinite;
    Ok(match (joint.is_infinite, split_inf) {
        (true, true) => 0.0,
        (false, false) => (joint.value - ra.value - rb.value).abs(),
        _ => f64::INFINITY,
    })
}

/// Outcome of the variational duality check.
#[derive(Clone, Debug)]
pub struct DualityResult {
    /// `log Tr e^{A + log ρ'}`.
    pub lhs: f64,
    /// `Tr(ρ_o A) − R(ρ_o‖ρ')` at the Gibbs maximizer `ρ_o`.
    pub rhs: f64,
    pub maximizer_gap: f64,
    pub maximizer: ComplexMatrix,
    /// Largest `Tr(ρA) − R(ρ‖ρ') − lhs` over the random trial states.
    pub worst_trial_excess: f64,
}

fn log_full_rank(rho_p: &ComplexMatrix) -> Result<ComplexMatrix> {
    let e = rho_p.eig_hermitian()?;
    if e.eigenvalues[0] <= 0.0 {
        return Err(Error::InvalidInput("rho' must be full rank".into()));
    }
    Ok(e.apply(f64::ln))
}

/// Variational identity `log Tr e^{A + log ρ'} = max_ρ [Tr(ρA) − R(ρ‖ρ')]`,
/// checked at the Gibbs maximizer and on `trials` random states.
pub fn duality_check(a: &ComplexMatrix, rho_p: &ComplexMatrix, trials: usize, seed: u64) -> Result<DualityResult> {
    if !a.is_hermitian(crate::matcore::TOL_HERM) {
        return Err(Error::InvalidInput("A must be Hermitian".into()));
    }
    let g = &a.clone() + &log_full_rank(rho_p)?;
    let e = g.eig_hermitian()?;
    let top = *e.eigenvalues.last().expect("nonempty");
    let z_shifted: f64 = e.eigenvalues.iter().map(|x| (x - top).exp()).sum();
    let lhs = top + z_shifted.ln();
    let maximizer = e.apply(|x| (x - top).exp() / z_shifted);
    let value = |rho: &ComplexMatrix| -> Result<f64> {
        let r = relative_entropy(rho, rho_p)?;
        Ok((rho * a).trace().re - r.value)
    };
    let rhs = value(&maximizer)?;
    let mut rng = rng_from_seed(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let rho = random_density(&mut rng, a.dim());
        worst = worst.max(value(&rho)? - lhs);
    }
    Ok(DualityResult { lhs, rhs, maximizer_gap: (lhs - rhs).abs(), maximizer, worst_trial_excess: worst })
}

/// `(Tr e^{A + log ρ'}, Tr(e^A ρ'))`; Golden–Thompson asserts `lhs ≤ rhs`.
pub fn golden_thompson_check(a: &ComplexMatrix, rho_p: &ComplexMatrix) -> Result<(f64, f64)> {
    let lhs = (&a.clone() + &log_full_rank(rho_p)?).mat_exp()?.trace().re;
    let rhs = (&a.mat_exp()? * rho_p).trace().re;
    Ok((lhs, rhs))
}

/// Random density matrix from a complex Ginibre draw.
pub fn random_density(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let p = &g * &g.adjoint();
    let t = p.trace().re;
    p.scale(re(1.0 / t))
}

/// Random Hermitian matrix with entries in the unit box.
pub fn random_hermitian(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    (&g + &g.adjoint()).scale(re(0.5))
}

/// Conditional error `ε = Tr[ρ_true (X_e − u)²]` and its guaranteed bound
/// `ε' = (log Tr[ρ^μ_nom e^{μ2 (X_e − u)²}] + R(ρ_true‖ρ^μ_nom)) / μ2`.
pub fn conditional_error_bound(
    true_state: &FilterState,
    nom_rs_state: &FilterState,
    u: f64,
    rp: &RiskParams,
    obs: &Observable,
) -> Result<(f64, f64)> {
    let t = true_state.state.normalized()?;
    let n = nom_rs_state.state.normalized()?;
    let k = obs.cost_operator(u);
    let eps: f64 = t.blocks().iter().map(|b| trace_product2(b, &k)).sum();
    let e = obs.exp_cost(rp.mu2, u);
    let z: f64 = n.blocks().iter().map(|b| trace_product2(b, &e)).sum();
    let r = relative_entropy_blocks(&t, &n)?;
    let eps_prime = if r.is_infinite { f64::INFINITY } else { (z.ln() + r.value) / rp.mu2 };
    Ok((eps, eps_prime))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{diag2, real2, sigma_x, sigma_z};
    use proptest::prelude::*;
    use rand::Rng;

    fn cm(m: Mat2) -> ComplexMatrix {
        m.into()
    }

    fn state(b: Mat2) -> FilterState {
        FilterState::new(BlockDensityMatrix::single(b).unwrap()).unwrap()
    }

    #[test]
    fn self_entropy_is_zero() {
        let r = relative_entropy(&cm(real2(0.6, 0.2, 0.2, 0.4)), &cm(real2(0.6, 0.2, 0.2, 0.4))).unwrap();
        assert!(r.value.abs() < 1e-14);
    }

    #[test]
    fn classical_kl_value() {
        let want = 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln();
        let r = relative_entropy(&cm(diag2(0.7, 0.3)), &cm(diag2(0.5, 0.5))).unwrap();
        assert!((r.value - want).abs() < 1e-14);
        assert!((want - 0.0823).abs() < 1e-4);
        let b = relative_entropy_blocks(
            &BlockDensityMatrix::single(diag2(0.7, 0.3)).unwrap(),
            &BlockDensityMatrix::single(diag2(0.5, 0.5)).unwrap(),
        )
        .unwrap();
        assert!((b.value - want).abs() < 1e-14);
    }

    #[test]
    fn support_violation_is_infinite() {
        let r = relative_entropy(&cm(diag2(1.0, 0.0)), &cm(diag2(0.0, 1.0))).unwrap();
        assert!(r.is_infinite && r.value.is_infinite());
        assert!((r.support_defect - 1.0).abs() < 1e-15);
        let r = relative_entropy(&cm(diag2(0.0, 1.0)), &cm(diag2(0.3, 0.7))).unwrap();
        assert!(!r.is_infinite);
    }

    #[test]
    fn unnormalized_input_rejected() {
        assert!(matches!(
            relative_entropy(&cm(diag2(0.5, 0.0)), &cm(diag2(0.5, 0.5))),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn additivity() {
        let a = cm(real2(0.6, 0.1, 0.1, 0.4));
        let ap = cm(diag2(0.3, 0.7));
        let b = cm(diag2(0.2, 0.8));
        assert!(entropy_additivity_check(&a, &ap, &b, &b).unwrap() <= 1e-12);
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let x = rng.random_range(0.05..0.95);
            let y = rng.random_range(0.05..0.95);
            let z = rng.random_range(0.05..0.95);
            let w = rng.random_range(0.05..0.95);
            let r = entropy_additivity_check(
                &cm(diag2(x, 1.0 - x)),
                &cm(diag2(y, 1.0 - y)),
                &cm(diag2(z, 1.0 - z)),
                &cm(diag2(w, 1.0 - w)),
            )
            .unwrap();
            assert!(r <= 1e-10);
        }
    }

    #[test]
    fn fig1_entropy_splits() {
        use crate::model::{build_true_nominal_fig1, FIG1_TRUE_WEIGHTS};
        let (t, n, _) = build_true_nominal_fig1(0.001).unwrap();
        let joint = relative_entropy_blocks(&t, &n).unwrap();
        let kl: f64 = FIG1_TRUE_WEIGHTS
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|w| w * (w * 20.0).ln())
            .sum();
        let sys = relative_entropy(&cm(real2(0.5, 0.5, 0.5, 0.5)), &cm(real2(0.5, 0.25, 0.25, 0.5))).unwrap();
        assert!((joint.value - kl - sys.value).abs() < 1e-12);
        assert!((sys.value - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn duality_at_zero_and_sigma_z() {
        let half = cm(diag2(0.5, 0.5));
        let d = duality_check(&ComplexMatrix::zeros(2), &half, 10, 1).unwrap();
        assert!(d.lhs.abs() < 1e-15);
        assert!((&d.maximizer - &half).max_abs() < 1e-15);
        let d = duality_check(&cm(sigma_z()), &half, 100, 2).unwrap();
        assert!((d.lhs - 1f64.cosh().ln()).abs() < 1e-14);
        assert!(d.maximizer_gap <= 1e-12);
        assert!(d.worst_trial_excess <= 1e-10);
    }

    #[test]
    fn duality_random_dimensions() {
        let mut rng = rng_from_seed(9);
        for n in [2, 3, 8, 20, 40] {
            let a = random_hermitian(&mut rng, n);
            let rp = random_density(&mut rng, n);
            let d = duality_check(&a, &rp, 100, n as u64).unwrap();
            assert!(d.maximizer_gap <= 1e-10, "n={n} gap {}", d.maximizer_gap);
            assert!(d.worst_trial_excess <= 1e-10);
        }
    }

    #[test]
    fn golden_thompson_cases() {
        let rp = cm(diag2(0.7, 0.3));
        let (l, r) = golden_thompson_check(&cm(diag2(0.4, -1.0)), &rp).unwrap();
        assert!((l - r).abs() < 1e-14);
        let (l, r) = golden_thompson_check(&cm(sigma_x()), &rp).unwrap();
        assert!(l < r - 1e-6);
    }

    #[test]
    fn conditional_bound_hand_case() {
        let rp = RiskParams::new(0.1, 0.182).unwrap();
        let obs = Observable::new(sigma_z()).unwrap();
        let (eps, epsp) = conditional_error_bound(&state(diag2(1.0, 0.0)), &state(diag2(0.5, 0.5)), 0.0, &rp, &obs).unwrap();
        assert!((eps - 1.0).abs() < 1e-15);
        assert!((epsp - (1.0 + 2f64.ln() / 0.182)).abs() < 1e-12);
        let (eps, epsp) = conditional_error_bound(&state(diag2(0.7, 0.3)), &state(diag2(0.7, 0.3)), 0.3, &rp, &obs).unwrap();
        assert!(eps <= epsp);
        let (_, epsp) = conditional_error_bound(&state(diag2(1.0, 0.0)), &state(diag2(0.0, 1.0)), 0.0, &rp, &obs).unwrap();
        assert!(epsp.is_infinite());
    }

    proptest! {
        #[test]
        fn entropy_nonnegative_and_zero_only_on_equality(seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let a = random_density(&mut rng, 3);
            let b = random_density(&mut rng, 3);
            let r = relative_entropy(&a, &b).unwrap();
            prop_assert!(r.value >= -1e-10);
            prop_assert!((&a - &b).max_abs() < 1e-6 || r.value > 1e-10);
            prop_assert!(relative_entropy(&a, &a).unwrap().value.abs() <= 1e-10);
        }

        #[test]
        fn golden_thompson_holds(seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let a = random_hermitian(&mut rng, 3);
            let rp = random_density(&mut rng, 3);
            let (l, r) = golden_thompson_check(&a, &rp).unwrap();
            prop_assert!(l <= r + 1e-10);
        }
    }
}
