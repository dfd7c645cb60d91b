//! Measurement-record generation under the true model.
//!
//! The true system is simulated by its own risk-neutral filter: each outcome is
//! drawn from the conditional law `Tr[V+ ϱ V+*] / (2 Tr ϱ)` and the filter is
//! advanced with the drawn outcome.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::filter::{estimate, rn_step, FilterState};
use crate::matcore::Mat2;
use crate::model::{BlockDensityMatrix, Outcome, ParameterEnsemble};

const P_TOL: f64 = 1e-12;

/// Asymptotic Kolmogorov–Smirnov critical value at the 1% level.
pub const KS_CRITICAL_1PCT: f64 = 1.628;

/// Per-path seed derived from a master seed, independent of scheduling.
pub fn path_seed(master: u64, k: u64) -> u64 {
    splitmix64(splitmix64(master) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Probability of `+λ` at the next step given the current true filter state.
pub fn plus_probability(s: &FilterState, c: &ParameterEnsemble) -> Result<f64> {
    let t = s.total_trace();
    if !(t > 0.0) {
        return Err(Error::DegenerateState(format!("total trace {t}")));
    }
    let p = rn_step(s, c, Outcome::Plus).total_trace() / (2.0 * t);
    if !(-P_TOL..=1.0 + P_TOL).contains(&p) {
        return Err(Error::NumericalConsistency(format!("p_plus = {p}")));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Draws one outcome from the conditional law; returns it with `p_plus`.
pub fn sample_outcome(
    s: &FilterState,
    c: &ParameterEnsemble,
    rng: &mut impl Rng,
) -> Result<(Outcome, f64)> {
    let p = plus_probability(s, c)?;
    let dy = if rng.random::<f64>() < p { Outcome::Plus } else { Outcome::Minus };
    Ok((dy, p))
}

/// One sampled measurement record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub dy: Vec<Outcome>,
    pub lambda: f64,
    pub seed: u64,
    pub p_plus: Vec<f64>,
    /// True conditional expectation after each step, when an observable was given.
    pub estimate_true: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.dy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dy.is_empty()
    }

    /// `Σ dy_l`.
    pub fn sum(&self) -> f64 {
        self.dy.iter().map(|d| d.value(self.lambda)).sum()
    }

    /// Product of the per-step conditional probabilities of the record.
    pub fn probability(&self) -> f64 {
        self.dy
            .iter()
            .zip(&self.p_plus)
            .map(|(d, p)| match d {
                Outcome::Plus => *p,
                Outcome::Minus => 1.0 - p,
            })
            .product()
    }
}

/// Samples `steps` outcomes from the true model started in `initial`.
pub fn sample_trajectory(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    steps: usize,
    seed: u64,
    observable: Option<&Mat2>,
) -> Result<TrajectoryRecord> {
    let mut rng = rng_from_seed(seed);
    let mut s = FilterState::new(initial.clone())?;
    let mut rec = TrajectoryRecord {
        dy: Vec::with_capacity(steps),
        lambda: c.lambda(),
        seed,
        p_plus: Vec::with_capacity(steps),
        estimate_true: Vec::new(),
    };
    for _ in 0..steps {
        let (dy, p) = sample_outcome(&s, c, &mut rng)?;
        s = rn_step(&s, c, dy);
        rec.dy.push(dy);
        rec.p_plus.push(p);
        if let Some(x) = observable {
            rec.estimate_true.push(estimate(&s, x)?);
        }
    }
    Ok(rec)
}

/// Probability the sampler assigns to a given record.
pub fn sampler_record_probability(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    record: &[Outcome],
) -> Result<f64> {
    let mut s = FilterState::new(initial.clone())?;
    let mut prob = 1.0;
    for &dy in record {
        let p = plus_probability(&s, c)?;
        prob *= if dy == Outcome::Plus { p } else { 1.0 - p };
        s = rn_step(&s, c, dy);
    }
    Ok(prob)
}

/// Writes a trajectory dump. Estimate columns that were not computed are left empty.
pub fn write_trajectory_csv(
    w: impl Write,
    rec: &TrajectoryRecord,
    estimate_nominal_rn: &[f64],
    estimate_nominal_rs: &[f64],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "step",
        "dy",
        "p_plus",
        "estimate_true",
        "estimate_nominal_rn",
        "estimate_nominal_rs",
    ])?;
    let cell = |v: &[f64], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
    for (i, dy) in rec.dy.iter().enumerate() {
        out.write_record([
            (i + 1).to_string(),
            dy.value(rec.lambda).to_string(),
            rec.p_plus[i].to_string(),
            cell(&rec.estimate_true, i),
            cell(estimate_nominal_rn, i),
            cell(estimate_nominal_rs, i),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and N(0, 1).
pub fn ks_statistic_normal(samples: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Normalized vacuum random-walk sums `Σ dy / (λ √N)`, each smoothed by a
/// uniform draw over its lattice cell so that the empirical law is continuous.
pub fn vacuum_normalized_sums(lambda: f64, steps: usize, samples: usize, master_seed: u64) -> Result<Vec<f64>> {
    let c = ParameterEnsemble::single(0.0, crate::model::InteractionCoefficients::zero(lambda));
    let vac = BlockDensityMatrix::single(crate::matcore::diag2(1.0, 0.0))?;
    let scale = lambda * (steps as f64).sqrt();
    (0..samples as u64)
        .map(|k| {
            let seed = path_seed(master_seed, k);
            let rec = sample_trajectory(&vac, &c, steps, seed, None)?;
            let jitter: f64 = rng_from_seed(seed ^ 0xA5A5_A5A5_A5A5_A5A5).random_range(-1.0..1.0);
            Ok((rec.sum() + jitter * lambda) / scale)
        })
        .collect()
}
