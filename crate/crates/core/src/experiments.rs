//! Monte Carlo harness: true-model sampling, nominal risk-neutral and
//! risk-sensitive filters on shared records, error metrics, sweeps and
//! observable-space diagnostics.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::filter::{estimate, rn_step, rs_step, suboptimal_estimate, FilterState, Observable, RiskParams};
use crate::matcore::{re, sigma_x, sigma_y, sigma_z, trace_product2, Mat2};
use crate::model::{build_beta_nominal, BlockDensityMatrix, InteractionCoefficients, ModelSetup, ModelSpec};
use crate::robustness::conditional_error_bound;
use crate::sampler::{path_seed, rng_from_seed, sample_outcome};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "QRS_THREADS";
/// Histogram bin count.
pub const HISTOGRAM_BINS: usize = 20;

/// A complete description of one Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub model: ModelSpec,
    pub steps: usize,
    pub paths: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl ExperimentConfig {
    /// Dispersive model, 2000 steps, 200 paths, `μ = (0.1, 0.182)`.
    pub fn fig1() -> Self {
        Self {
            model: ModelSpec::fig1(crate::model::DEFAULT_LAMBDA2),
            steps: 2000,
            paths: 200,
            mu1: 0.1,
            mu2: 0.182,
            seed: 1,
            beta: None,
        }
    }

    /// Spontaneous-emission model, 5000 steps, 200 paths, `μ = (0.15, 0.25)`.
    pub fn fig3() -> Self {
        Self {
            model: ModelSpec::fig3(crate::model::DEFAULT_LAMBDA2),
            steps: 5000,
            paths: 200,
            mu1: 0.15,
            mu2: 0.25,
            seed: 3,
            beta: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn risk(&self) -> Result<RiskParams> {
        RiskParams::new(self.mu1, self.mu2).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.model.lambda2 > 0.0) {
            return Err(Error::Config(format!("lambda2 must be positive, got {}", self.model.lambda2)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if let Some(b) = self.beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("beta must lie in [0, 1], got {b}")));
            }
        }
        self.risk()?;
        Ok(())
    }

    /// Validates and builds the model; a configured `beta` replaces the nominal
    /// state with the corresponding member of the interpolating family.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let mut setup = self.model.build()?;
        if let Some(b) = self.beta {
            setup.nominal_state = build_beta_nominal(b)?;
            if setup.kind != crate::model::ModelKind::Dispersive || setup.nominal_state.len() != setup.ensemble.len() {
                return Err(Error::Config("beta family needs the 20-member dispersive grid".into()));
            }
        }
        let obs = Observable::new(setup.observable)?;
        Ok(Prepared { setup, obs })
    }
}

/// A built model together with its estimated observable.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub setup: ModelSetup,
    pub obs: Observable,
}

/// Per-step output of [`run_path`].
#[derive(Clone, Debug, Default)]
pub struct PathTrace {
    pub estimate_true: Vec<f64>,
    pub estimate_rn: Vec<f64>,
    /// One series per risk-parameter pair.
    pub estimate_rs: Vec<Vec<f64>>,
    /// `Tr[ρ_true (X_e − u_l)²]` per risk-parameter pair.
    pub eps: Vec<Vec<f64>>,
    /// The guaranteed bound per risk-parameter pair; empty unless requested.
    pub eps_prime: Vec<Vec<f64>>,
    pub p_plus: Vec<f64>,
    pub dy: Vec<crate::model::Outcome>,
}

/// Samples one record from the true model and runs the true risk-neutral,
/// nominal risk-neutral and one nominal risk-sensitive filter per entry of
/// `rps`, all on that record.
pub fn run_path(
    prep: &Prepared,
    nominal: &BlockDensityMatrix,
    rps: &[RiskParams],
    steps: usize,
    seed: u64,
    bounds: bool,
) -> Result<PathTrace> {
    let c = &prep.setup.ensemble;
    let x = prep.obs.matrix();
    let mut rng = rng_from_seed(seed);
    let mut truth = FilterState::new(prep.setup.true_state.clone())?;
    let mut rn = FilterState::new(nominal.clone())?;
    let mut rs: Vec<FilterState> = rps.iter().map(|_| FilterState::new(nominal.clone())).collect::<Result<_>>()?;
    let mut out = PathTrace {
        estimate_rs: vec![Vec::with_capacity(steps); rps.len()],
        eps: vec![Vec::with_capacity(steps); rps.len()],
        eps_prime: vec![Vec::new(); rps.len()],
        ..Default::default()
    };
    for _ in 0..steps {
        let (dy, p) = sample_outcome(&truth, c, &mut rng)?;
        truth = rn_step(&truth, c, dy);
        rn = rn_step(&rn, c, dy);
        out.dy.push(dy);
        out.p_plus.push(p);
        out.estimate_true.push(estimate(&truth, x)?);
        out.estimate_rn.push(estimate(&rn, x)?);
        let true_norm = truth.state.normalized()?;
        for (j, rp) in rps.iter().enumerate() {
            let u_prev = rs[j].last_estimate.unwrap_or(0.0);
            let mut next = rs_step(&rs[j], c, rp, &prep.obs, u_prev, dy);
            let u = suboptimal_estimate(&next, rp, &prep.obs)?;
            next.last_estimate = Some(u);
            let k = prep.obs.cost_operator(u);
            out.eps[j].push(true_norm.blocks().iter().map(|b| trace_product2(b, &k)).sum());
            if bounds {
                out.eps_prime[j].push(conditional_error_bound(&truth, &next, u, rp, &prep.obs)?.1);
            }
            out.estimate_rs[j].push(u);
            rs[j] = next;
        }
    }
    Ok(out)
}

/// Averaged total estimation errors of one path and its conditional errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub delta_rn: f64,
    pub delta_rs: f64,
    pub eps_series: Vec<f64>,
    /// Empty unless bounds were requested.
    pub eps_prime_series: Vec<f64>,
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

impl ErrorMetrics {
    fn from_trace(t: &PathTrace, j: usize) -> Self {
        Self {
            delta_rn: mean_abs_diff(&t.estimate_true, &t.estimate_rn),
            delta_rs: mean_abs_diff(&t.estimate_true, &t.estimate_rs[j]),
            eps_series: t.eps[j].clone(),
            eps_prime_series: t.eps_prime[j].clone(),
        }
    }
}

/// `Δ^rn` and `Δ^rs` on one sampled record.
pub fn run_trajectory_triple(prep: &Prepared, rp: &RiskParams, steps: usize, seed: u64) -> Result<ErrorMetrics> {
    let t = run_path(prep, &prep.setup.nominal_state, &[*rp], steps, seed, false)?;
    Ok(ErrorMetrics::from_trace(&t, 0))
}

/// Runs `f` on a pool capped by `QRS_THREADS`.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Path-parallel map over `paths` derived seeds; results are in path order.
pub fn map_paths<T: Send>(paths: usize, master_seed: u64, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    with_thread_cap(|| (0..paths as u64).into_par_iter().map(|k| f(path_seed(master_seed, k))).collect())?
}

/// Per-path metrics for a whole configuration.
pub fn run_paths(prep: &Prepared, rp: &RiskParams, steps: usize, paths: usize, seed: u64) -> Result<Vec<ErrorMetrics>> {
    map_paths(paths, seed, |s| run_trajectory_triple(prep, rp, steps, s))
}

/// One-sided paired t-test of `mean(a − b) > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    let n = a.len();
    if n != b.len() || n < 2 {
        return Err(Error::InvalidInput("paired test needs two equal samples of size >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    if var == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTTest { mean_diff: mean, t, df, p_value: p });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(PairedTTest { mean_diff: mean, t, df, p_value: 1.0 - dist.cdf(t) })
}

/// Equal-width histogram over `[0, max]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let max = values.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut counts = vec![0; bins];
    for &v in values {
        let i = ((v / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges: (0..=bins).map(|i| i as f64 * width).collect(), counts }
}

/// Aggregate of a Monte Carlo comparison of the two nominal estimators.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonSummary {
    pub mean_rn: f64,
    pub mean_rs: f64,
    pub test: PairedTTest,
    pub histogram_rn: Histogram,
    pub histogram_rs: Histogram,
}

pub fn summarize(metrics: &[ErrorMetrics]) -> Result<ComparisonSummary> {
    let rn: Vec<f64> = metrics.iter().map(|m| m.delta_rn).collect();
    let rs: Vec<f64> = metrics.iter().map(|m| m.delta_rs).collect();
    let n = metrics.len() as f64;
    Ok(ComparisonSummary {
        mean_rn: rn.iter().sum::<f64>() / n,
        mean_rs: rs.iter().sum::<f64>() / n,
        test: paired_t_test(&rn, &rs)?,
        histogram_rn: histogram(&rn, HISTOGRAM_BINS),
        histogram_rs: histogram(&rs, HISTOGRAM_BINS),
    })
}

/// One row of the uncertainty sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaRow {
    pub beta: f64,
    pub mean_rn: f64,
    pub mean_rs: f64,
}

/// Mean `Δ^rn`, `Δ^rs` for each nominal state of the β family. The true
/// model does not depend on β, so every β sees the same records.
pub fn beta_sweep(
    prep: &Prepared,
    betas: &[f64],
    rp: &RiskParams,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<BetaRow>> {
    let nominals: Vec<BlockDensityMatrix> = betas.iter().map(|&b| build_beta_nominal(b)).collect::<Result<_>>()?;
    if nominals.iter().any(|n| n.len() != prep.setup.ensemble.len()) {
        return Err(Error::Config("beta family needs the 20-member dispersive grid".into()));
    }
    let per_path = map_paths(paths, seed, |s| {
        nominals
            .iter()
            .map(|nom| run_path(prep, nom, &[*rp], steps, s, false).map(|t| ErrorMetrics::from_trace(&t, 0)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(i, &beta)| BetaRow {
            beta,
            mean_rn: per_path.iter().map(|p| p[i].delta_rn).sum::<f64>() / paths as f64,
            mean_rs: per_path.iter().map(|p| p[i].delta_rs).sum::<f64>() / paths as f64,
        })
        .collect())
}

/// Per-step conditional error and guaranteed bound along one record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub step: usize,
    pub eps: f64,
    pub eps_prime: f64,
    pub estimate_true: f64,
    pub estimate_rn: f64,
    pub estimate_rs: f64,
}

pub fn bound_trace(prep: &Prepared, rp: &RiskParams, steps: usize, seed: u64) -> Result<Vec<BoundRow>> {
    let t = run_path(prep, &prep.setup.nominal_state, &[*rp], steps, seed, true)?;
    Ok((0..steps)
        .map(|i| BoundRow {
            step: i + 1,
            eps: t.eps[0][i],
            eps_prime: t.eps_prime[0][i],
            estimate_true: t.estimate_true[i],
            estimate_rn: t.estimate_rn[i],
            estimate_rs: t.estimate_rs[0][i],
        })
        .collect())
}

/// Path-averaged conditional error series for two risk-parameter pairs on
/// shared records.
pub fn mu1_comparison(
    prep: &Prepared,
    a: &RiskParams,
    b: &RiskParams,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let traces = map_paths(paths, seed, |s| {
        run_path(prep, &prep.setup.nominal_state, &[*a, *b], steps, s, false).map(|t| t.eps)
    })?;
    let mean = |j: usize| -> Vec<f64> {
        (0..steps).map(|i| traces.iter().map(|t| t[j][i]).sum::<f64>() / paths as f64).collect()
    };
    Ok((mean(0), mean(1)))
}

/// Tests whether `|π_true − π_nom|` shrinks from step `N/10` to step `N`.
pub fn stability_test(prep: &Prepared, steps: usize, paths: usize, seed: u64) -> Result<PairedTTest> {
    let early = (steps / 10).max(1) - 1;
    let gaps = map_paths(paths, seed, |s| {
        let t = run_path(prep, &prep.setup.nominal_state, &[], steps, s, false)?;
        let gap = |i: usize| (t.estimate_true[i] - t.estimate_rn[i]).abs();
        Ok((gap(early), gap(steps - 1)))
    })?;
    let (e, l): (Vec<f64>, Vec<f64>) = gaps.into_iter().unzip();
    paired_t_test(&e, &l)
}

// ---------------------------------------------------------------------------
// Observable space.

fn pauli_basis() -> [Mat2; 4] {
    [Mat2::identity(), sigma_x(), sigma_y(), sigma_z()]
}

fn to_coords(x: &Mat2) -> [f64; 4] {
    pauli_basis().map(|p| 0.5 * trace_product2(&p, x))
}

fn from_coords(v: &[f64]) -> Mat2 {
    pauli_basis().iter().zip(v).fold(Mat2::zeros(), |acc, (p, c)| acc + p * re(*c))
}

/// `𝓛(X) = M+* X M+ + λ² M∘* X M∘ + X M∘ + M∘* X`.
pub fn generator_l(c: &InteractionCoefficients, x: &Mat2) -> Mat2 {
    let (p, o) = (&c.m_plus, &c.m_circ);
    p.adjoint() * x * p + o.adjoint() * x * o * re(c.lambda2()) + x * o + o.adjoint() * x
}

/// `𝓙(X) = λ² M+* X M∘ + λ² M∘* X M+ + X M+ + M+* X`.
pub fn generator_j(c: &InteractionCoefficients, x: &Mat2) -> Mat2 {
    let (p, o) = (&c.m_plus, &c.m_circ);
    (p.adjoint() * x * o + o.adjoint() * x * p) * re(c.lambda2()) + x * p + p.adjoint() * x
}

/// Real 4×4 matrix of a map on Hermitian matrices in the Pauli basis.
fn superoperator(f: impl Fn(&Mat2) -> Mat2) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for (j, p) in pauli_basis().iter().enumerate() {
        let col = to_coords(&f(p));
        for i in 0..4 {
            m[(i, j)] = col[i];
        }
    }
    m
}

/// Dimension of and orthonormal basis for an observable space.
#[derive(Clone, Debug)]
pub struct ObservableSpace {
    pub dimension: usize,
    pub basis: Vec<Mat2>,
}

impl ObservableSpace {
    /// Whether `x` lies in the span to within `tol` (relative).
    pub fn contains(&self, x: &Mat2, tol: f64) -> bool {
        let v = to_coords(x);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut r = v;
        for b in &self.basis {
            let bv = to_coords(b);
            let dot: f64 = r.iter().zip(&bv).map(|(a, c)| a * c).sum();
            for i in 0..4 {
                r[i] -= dot * bv[i];
            }
        }
        r.iter().map(|a| a * a).sum::<f64>().sqrt() <= tol * norm.max(1e-300)
    }
}

/// Closes `span{I}` under the given real superoperators.
fn close_span(maps: &[Matrix4<f64>], tol_rank: f64) -> ObservableSpace {
    let mut basis: Vec<[f64; 4]> = vec![[1.0, 0.0, 0.0, 0.0]];
    let mut frontier = basis.clone();
    while let Some(v) = frontier.pop() {
        for m in maps {
            let w = m * nalgebra::Vector4::from(v);
            let norm = w.norm();
            if norm == 0.0 {
                continue;
            }
            let mut r = [w[0], w[1], w[2], w[3]];
            for b in &basis {
                let dot: f64 = r.iter().zip(b).map(|(a, c)| a * c).sum();
                for i in 0..4 {
                    r[i] -= dot * b[i];
                }
            }
            let rn = r.iter().map(|a| a * a).sum::<f64>().sqrt();
            if rn > tol_rank * norm && basis.len() < 4 {
                let unit = r.map(|a| a / rn);
                basis.push(unit);
                frontier.push(unit);
            }
        }
    }
    // rank confirmation by singular values
    let m = DMatrix::from_fn(4, basis.len(), |i, j| basis[j][i]);
    let rank = m.singular_values().iter().filter(|&&s| s > tol_rank).count();
    debug_assert_eq!(rank, basis.len());
    ObservableSpace { dimension: rank, basis: basis.iter().map(|v| from_coords(v)).collect() }
}

/// Observable space generated by the discrete-λ maps `𝓛`, `𝓙`.
pub fn observable_space(c: &InteractionCoefficients, tol_rank: f64) -> ObservableSpace {
    let l = superoperator(|x| generator_l(c, x));
    let j = superoperator(|x| generator_j(c, x));
    close_span(&[l, j], tol_rank)
}

/// Observable space of the `λ → 0` limits of `𝓛`, `𝓙`, estimated by
/// Richardson extrapolation `(4 T(λ/2) − T(λ)) / 3` from coefficients built
/// at `λ` and `λ/2`.
pub fn observable_space_limit(
    build: impl Fn(f64) -> Result<InteractionCoefficients>,
    lambda: f64,
    tol_rank: f64,
) -> Result<ObservableSpace> {
    let (a, b) = (build(lambda)?, build(lambda / 2.0)?);
    let extrap = |f: fn(&InteractionCoefficients, &Mat2) -> Mat2| {
        let ta = superoperator(|x| f(&a, x));
        let tb = superoperator(|x| f(&b, x));
        (tb * 4.0 - ta) / 3.0
    };
    Ok(close_span(&[extrap(generator_l), extrap(generator_j)], tol_rank))
}

// ---------------------------------------------------------------------------
// Artifacts.

pub fn write_path_metrics_csv(w: impl Write, metrics: &[ErrorMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["path_id", "delta_rn", "delta_rs"])?;
    for (i, m) in metrics.iter().enumerate() {
        out.write_record([i.to_string(), m.delta_rn.to_string(), m.delta_rs.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_bound_trace_csv(w: impl Write, rows: &[BoundRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "eps", "eps_prime", "estimate_true", "estimate_rn", "estimate_rs"])?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.eps.to_string(),
            r.eps_prime.to_string(),
            r.estimate_true.to_string(),
            r.estimate_rn.to_string(),
            r.estimate_rs.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_beta_csv(w: impl Write, rows: &[BetaRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["beta", "mean_rn", "mean_rs"])?;
    for r in rows {
        out.write_record([r.beta.to_string(), r.mean_rn.to_string(), r.mean_rs.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub verb: String,
    /// Command-line arguments after the program name.
    #[serde(default)]
    pub args: Vec<String>,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
    pub version: String,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, Outcome};

    const LAM: f64 = 0.031_622_776_601_683_79;

    fn small(cfg: ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig { steps: 50, paths: 4, ..cfg }
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::fig1();
        assert!(c.validate().is_ok());
        c.paths = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::fig1();
        c.mu2 = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::fig1();
        c.beta = Some(1.5);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::fig3();
        c.beta = Some(0.5);
        assert!(c.prepare().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = ExperimentConfig { beta: Some(0.25), ..ExperimentConfig::fig3() };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(c.model.model, ModelKind::Spontaneous);
    }

    #[test]
    fn identical_models_give_zero_rn_error() {
        let mut cfg = small(ExperimentConfig::fig1());
        cfg.model.nominal_weights = cfg.model.true_weights.clone();
        cfg.model.nominal_system = cfg.model.true_system;
        let prep = cfg.prepare().unwrap();
        let rp = RiskParams::new(1e-6, 1e-6).unwrap();
        let m = run_trajectory_triple(&prep, &rp, 200, 9).unwrap();
        assert_eq!(m.delta_rn, 0.0);
        assert!(m.delta_rs <= 1e-4);
    }

    #[test]
    fn paths_are_reproducible_and_thread_independent() {
        let prep = small(ExperimentConfig::fig1()).prepare().unwrap();
        let rp = RiskParams::new(0.1, 0.182).unwrap();
        let a = run_paths(&prep, &rp, 40, 6, 5).unwrap();
        std::env::set_var(THREADS_ENV, "1");
        let b = run_paths(&prep, &rp, 40, 6, 5).unwrap();
        std::env::remove_var(THREADS_ENV);
        assert_eq!(a, b);
    }

    #[test]
    fn shared_records_across_filters() {
        let prep = small(ExperimentConfig::fig1()).prepare().unwrap();
        let rp = RiskParams::new(0.1, 0.182).unwrap();
        let t = run_path(&prep, &prep.setup.nominal_state, &[rp, rp], 30, 1, false).unwrap();
        assert_eq!(t.estimate_rs[0], t.estimate_rs[1]);
        let again = run_path(&prep, &prep.setup.nominal_state, &[], 30, 1, false).unwrap();
        assert_eq!(t.dy, again.dy);
        assert!(t.dy.contains(&Outcome::Minus));
    }

    #[test]
    fn t_test_and_histogram() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.5, 1.4, 2.6, 3.3];
        let t = paired_t_test(&a, &b).unwrap();
        assert!(t.mean_diff > 0.0 && t.p_value < 0.05);
        let r = paired_t_test(&b, &a).unwrap();
        assert!(r.p_value > 0.95);
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 20);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[19], 2);
        assert_eq!(h.edges.len(), 21);
    }

    #[test]
    fn bound_holds_on_short_trace() {
        let prep = small(ExperimentConfig::fig1()).prepare().unwrap();
        let rp = RiskParams::new(0.1, 0.182).unwrap();
        let rows = bound_trace(&prep, &rp, 100, 2).unwrap();
        assert!(rows.iter().all(|r| r.eps >= 0.0 && r.eps <= r.eps_prime));
    }

    #[test]
    fn bound_changes_with_mu2_on_fixed_states() {
        let obs = Observable::new(sigma_z()).unwrap();
        let t = FilterState::new(BlockDensityMatrix::single(crate::matcore::diag2(0.8, 0.2)).unwrap()).unwrap();
        let n = FilterState::new(BlockDensityMatrix::single(crate::matcore::diag2(0.6, 0.4)).unwrap()).unwrap();
        let lo = conditional_error_bound(&t, &n, 0.5, &RiskParams::new(0.1, 0.1).unwrap(), &obs).unwrap();
        let hi = conditional_error_bound(&t, &n, 0.5, &RiskParams::new(0.1, 0.5).unwrap(), &obs).unwrap();
        assert_eq!(lo.0, hi.0);
        assert!(lo.1 != hi.1);
    }

    #[test]
    fn identical_mu_pairs_coincide() {
        let prep = small(ExperimentConfig::fig1()).prepare().unwrap();
        let rp = RiskParams::new(0.1, 0.182).unwrap();
        let (a, b) = mu1_comparison(&prep, &rp, &rp, 20, 3, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn beta_zero_gives_no_rn_error() {
        let prep = small(ExperimentConfig::fig1()).prepare().unwrap();
        let rp = RiskParams::new(0.01, 0.05).unwrap();
        let rows = beta_sweep(&prep, &[0.0, 1.0], &rp, 30, 3, 8).unwrap();
        assert!(rows[0].mean_rn < 1e-12);
        assert!(rows[1].mean_rn > 0.0);
    }

    #[test]
    fn observable_spaces() {
        let tol = 1e-8;
        let d = observable_space(&InteractionCoefficients::dispersive_closed_form(0.7, LAM), tol);
        assert_eq!(d.dimension, 2);
        assert!(d.contains(&sigma_z(), 1e-8) && !d.contains(&sigma_x(), 1e-3));
        let s = observable_space(&InteractionCoefficients::spontaneous_closed_form(0.7, LAM), tol);
        assert_eq!(s.dimension, 3);
        assert!(s.contains(&sigma_x(), 1e-8) && s.contains(&sigma_z(), 1e-8) && !s.contains(&sigma_y(), 1e-3));
        assert_eq!(observable_space(&InteractionCoefficients::zero(LAM), tol).dimension, 1);
        let dl = observable_space_limit(|l| Ok(InteractionCoefficients::dispersive_closed_form(0.7, l)), LAM, tol).unwrap();
        assert_eq!(dl.dimension, 2);
        let sl = observable_space_limit(|l| Ok(InteractionCoefficients::spontaneous_closed_form(0.7, l)), LAM, tol).unwrap();
        assert_eq!(sl.dimension, 3);
    }

    #[test]
    fn csv_writers() {
        let m = vec![ErrorMetrics { delta_rn: 0.5, delta_rs: 0.25, eps_series: vec![], eps_prime_series: vec![] }];
        let mut buf = Vec::new();
        write_path_metrics_csv(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "path_id,delta_rn,delta_rs\n0,0.5,0.25\n");
        let mut buf = Vec::new();
        write_beta_csv(&mut buf, &[BetaRow { beta: 1.0, mean_rn: 0.2, mean_rs: 0.1 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "beta,mean_rn,mean_rs\n1,0.2,0.1\n");
    }
}
