//! Exact finite-horizon dynamic programming on the record tree.
//!
//! The information state along a prefix depends on the record and on every
//! control chosen before, so the recursion enumerates controls as well as
//! outcomes. Intermediate controls come from a finite candidate set per node:
//! the grid plus any values proposed by supplied policies. The terminal
//! control is minimized continuously.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{
    argmin_exp_cost, estimate, rn_step, rs_step, suboptimal_estimate, terminal_cost, FilterState, Observable,
    RiskParams,
};
use crate::matcore::Mat2;
use crate::model::{BlockDensityMatrix, Outcome, ParameterEnsemble};
use crate::sampler::rng_from_seed;

/// Deepest horizon accepted by [`dp_solve`].
pub const MAX_DP_STEPS: usize = 12;
/// Largest number of leaves the record-and-control tree may have.
pub const MAX_DP_LEAVES: f64 = 2e8;
/// Default number of grid points for intermediate controls.
pub const DEFAULT_GRID_POINTS: usize = 101;

const TIE_REL: f64 = 1e-14;
const PAR_DEPTH: usize = 3;

/// Estimates indexed by record prefix (lengths `1..=N`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyTable(pub HashMap<Vec<Outcome>, f64>);

impl PolicyTable {
    pub fn get(&self, prefix: &[Outcome]) -> f64 {
        *self.0.get(prefix).unwrap_or_else(|| panic!("policy has no entry for {prefix:?}"))
    }

    pub fn try_get(&self, prefix: &[Outcome]) -> Option<f64> {
        self.0.get(prefix).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_fn(&self) -> impl Fn(&[Outcome]) -> f64 + Sync + '_ {
        move |r| self.get(r)
    }
}

/// `points` equally spaced values on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Grid spanning the spectrum of `X_e` with a margin of 1 on each side.
pub fn default_u_grid(obs: &Observable, points: usize) -> Vec<f64> {
    let [a, b] = obs.eigenvalues();
    uniform_grid(a.min(b) - 1.0, a.max(b) + 1.0, points)
}

fn children(
    s: &FilterState,
    c: &ParameterEnsemble,
    rp: &RiskParams,
    obs: &Observable,
    u: f64,
) -> [(Outcome, FilterState); 2] {
    Outcome::BOTH.map(|dy| (dy, rs_step(s, c, rp, obs, u, dy)))
}

fn extend(prefix: &[Outcome], dy: Outcome) -> Vec<Outcome> {
    let mut p = prefix.to_vec();
    p.push(dy);
    p
}

/// `(1/2)^N Σ_r Tr[ϱ^μ_N(r) e^{μ2 K(u_N(r))}]`, the risk cost of a policy
/// evaluated with the risk-sensitive filter over every record.
pub fn filter_risk_cost(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    policy: &(dyn Fn(&[Outcome]) -> f64 + Sync),
    rp: &RiskParams,
    obs: &Observable,
    n: usize,
) -> Result<f64> {
    fn walk(
        s: &FilterState,
        prefix: &[Outcome],
        c: &ParameterEnsemble,
        policy: &(dyn Fn(&[Outcome]) -> f64 + Sync),
        rp: &RiskParams,
        obs: &Observable,
        n: usize,
    ) -> f64 {
        if prefix.len() == n {
            return terminal_cost(s, rp, obs, policy(prefix)) * s.log_scale.exp();
        }
        let u = if prefix.is_empty() { 0.0 } else { policy(prefix) };
        Outcome::BOTH
            .iter()
            .map(|&dy| 0.5 * walk(&rs_step(s, c, rp, obs, u, dy), &extend(prefix, dy), c, policy, rp, obs, n))
            .sum()
    }
    let s = FilterState::new(initial.clone())?;
    Ok(walk(&s, &[], c, policy, rp, obs, n))
}

/// The suboptimal estimator on every prefix of length `1..=n`.
pub fn suboptimal_policy(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    rp: &RiskParams,
    obs: &Observable,
    n: usize,
) -> Result<PolicyTable> {
    fn walk(
        s: &FilterState,
        prefix: Vec<Outcome>,
        c: &ParameterEnsemble,
        rp: &RiskParams,
        obs: &Observable,
        n: usize,
        out: &mut PolicyTable,
    ) -> Result<()> {
        let u = if prefix.is_empty() {
            0.0
        } else {
            let u = suboptimal_estimate(s, rp, obs)?;
            out.0.insert(prefix.clone(), u);
            u
        };
        if prefix.len() < n {
            for (dy, child) in children(s, c, rp, obs, u) {
                walk(&child, extend(&prefix, dy), c, rp, obs, n, out)?;
            }
        }
        Ok(())
    }
    let mut out = PolicyTable::default();
    walk(&FilterState::new(initial.clone())?, Vec::new(), c, rp, obs, n, &mut out)?;
    Ok(out)
}

/// The risk-neutral estimator `π_l(X)` on every prefix of length `1..=n`.
pub fn risk_neutral_policy(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    x: &Mat2,
    n: usize,
) -> Result<PolicyTable> {
    let mut out = PolicyTable::default();
    let mut frontier = vec![(Vec::new(), FilterState::new(initial.clone())?)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (prefix, s) in frontier {
            for dy in Outcome::BOTH {
                let child = rn_step(&s, c, dy);
                let p = extend(&prefix, dy);
                out.0.insert(p.clone(), estimate(&child, x)?);
                next.push((p, child));
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// Independent uniform estimates on `[lo, hi]` for every prefix of length `1..=n`.
pub fn random_policy(n: usize, lo: f64, hi: f64, seed: u64) -> PolicyTable {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut out = PolicyTable::default();
    for l in 1..=n {
        for r in crate::oracle::all_records(l) {
            out.0.insert(r, rng.random_range(lo..=hi));
        }
    }
    out
}

/// Result of [`dp_solve`].
#[derive(Clone, Debug)]
pub struct DpSolution {
    pub policy: PolicyTable,
    pub optimal_cost: f64,
}

struct Dp<'a> {
    c: &'a ParameterEnsemble,
    rp: RiskParams,
    obs: &'a Observable,
    n: usize,
    grid: Vec<f64>,
    extra: &'a [&'a PolicyTable],
}

/// Picks the smallest-index candidate whose value is within rounding of the minimum.
fn argmin_with_ties(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_REL * best.abs();
    values.iter().position(|&v| v <= best + tol).expect("nonempty")
}

impl Dp<'_> {
    fn candidates(&self, prefix: &[Outcome]) -> Vec<f64> {
        let mut c = self.grid.clone();
        c.extend(self.extra.iter().filter_map(|p| p.try_get(prefix)));
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }

    fn terminal(&self, s: &FilterState, prefix: &[Outcome]) -> (f64, f64) {
        let t = s.total_trace();
        let w = self.obs.eigen_weights(&(s.state.system_marginal() / crate::matcore::re(t)));
        let mut cands = vec![argmin_exp_cost(w, self.obs.eigenvalues(), self.rp.mu2)];
        cands.extend(self.candidates(prefix));
        cands.sort_by(f64::total_cmp);
        let vals: Vec<f64> = cands
            .iter()
            .map(|&u| terminal_cost(s, &self.rp, self.obs, u) * s.log_scale.exp())
            .collect();
        let i = argmin_with_ties(&vals);
        (vals[i], cands[i])
    }

    fn expand(&self, s: &FilterState, prefix: &[Outcome], u: f64) -> f64 {
        let kids = children(s, self.c, &self.rp, self.obs, u);
        let eval = |(dy, child): &(Outcome, FilterState)| 0.5 * self.value(child, &extend(prefix, *dy));
        if self.n - prefix.len() >= PAR_DEPTH {
            kids.par_iter().map(eval).sum()
        } else {
            kids.iter().map(eval).sum()
        }
    }

    fn choices(&self, s: &FilterState, prefix: &[Outcome]) -> (Vec<f64>, Vec<f64>) {
        let cands = self.candidates(prefix);
        let vals: Vec<f64> = if self.n - prefix.len() >= PAR_DEPTH {
            cands.par_iter().map(|&u| self.expand(s, prefix, u)).collect()
        } else {
            cands.iter().map(|&u| self.expand(s, prefix, u)).collect()
        };
        (cands, vals)
    }

    /// Optimal cost-to-go at a node.
    fn value(&self, s: &FilterState, prefix: &[Outcome]) -> f64 {
        if prefix.len() == self.n {
            return self.terminal(s, prefix).0;
        }
        if prefix.is_empty() {
            return self.expand(s, prefix, 0.0);
        }
        let (_, vals) = self.choices(s, prefix);
        vals[argmin_with_ties(&vals)]
    }

    /// Walks the optimal choices and records them.
    fn reconstruct(&self, s: &FilterState, prefix: Vec<Outcome>, out: &mut PolicyTable) {
        if prefix.len() == self.n {
            out.0.insert(prefix.clone(), self.terminal(s, &prefix).1);
            return;
        }
        let u = if prefix.is_empty() {
            0.0
        } else {
            let (cands, vals) = self.choices(s, &prefix);
            let u = cands[argmin_with_ties(&vals)];
            out.0.insert(prefix.clone(), u);
            u
        };
        for (dy, child) in children(s, self.c, &self.rp, self.obs, u) {
            self.reconstruct(&child, extend(&prefix, dy), out);
        }
    }
}

/// Optimal risk-sensitive estimates over horizon `n` by backward recursion
/// `f_{l-1}(ϱ) = min_u (1/2)[f_l(Γ(ϱ,u,+λ)) + f_l(Γ(ϱ,u,−λ))]` with terminal
/// `f_N(ϱ) = min_u Tr[ϱ e^{μ2 K(u)}]`.
///
/// Intermediate controls range over `u_grid` together with the values the
/// `extra` policies assign to the current prefix.
pub fn dp_solve(
    initial: &BlockDensityMatrix,
    c: &ParameterEnsemble,
    n: usize,
    rp: &RiskParams,
    obs: &Observable,
    u_grid: &[f64],
    extra: &[&PolicyTable],
) -> Result<DpSolution> {
    if n > MAX_DP_STEPS {
        return Err(Error::Capacity(format!("dynamic programming supports at most {MAX_DP_STEPS} steps, got {n}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if u_grid.is_empty() && extra.is_empty() && n > 1 {
        return Err(Error::InvalidInput("no candidate controls".into()));
    }
    let width = (u_grid.len() + extra.len()) as f64;
    let leaves = 2f64.powi(n as i32) * width.powi(n as i32 - 1);
    if leaves > MAX_DP_LEAVES {
        return Err(Error::Capacity(format!(
            "record-and-control tree has about {leaves:.3e} leaves, limit {MAX_DP_LEAVES:.0e}"
        )));
    }
    let dp = Dp { c, rp: *rp, obs, n, grid: u_grid.to_vec(), extra };
    let root = FilterState::new(initial.clone())?;
    let optimal_cost = dp.value(&root, &[]);
    let mut policy = PolicyTable::default();
    dp.reconstruct(&root, Vec::new(), &mut policy);
    Ok(DpSolution { policy, optimal_cost })
}
