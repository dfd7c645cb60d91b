//! Brute-force reference computations on the full system ⊗ field space.
//!
//! Basis index layout for `N` slices: the system qubit is the most significant
//! bit, followed by slice 1, ..., slice N. The slice vacuum is basis vector 1.
//! Quadrature projectors `P±` are diagonalized by a Hadamard on every slice;
//! in that rotated basis slice bit 0 means `+λ` and bit 1 means `-λ`.
//!
//! All operators are block diagonal over the parameter ensemble, so each
//! parameter value gets its own unitary chain and results are summed.

use crate::error::{Error, Result};
use crate::filter::{Observable, RiskParams};
use crate::matcore::{re, ComplexMatrix, Mat2, ZERO};
use crate::model::{BlockDensityMatrix, InteractionCoefficients, Outcome, ParameterEnsemble};
use crate::robustness::relative_entropy_blocks;

/// Largest number of slices the oracle will simulate.
pub const MAX_ORACLE_STEPS: usize = 9;

/// An estimate policy: `u_l` as a function of the record prefix of length `l`.
pub type Policy<'a> = dyn Fn(&[Outcome]) -> f64 + Sync + 'a;

/// Record of length `l` encoded by `k`, first outcome in the most significant bit.
pub fn record_from_index(k: usize, l: usize) -> Vec<Outcome> {
    (0..l)
        .map(|j| if (k >> (l - 1 - j)) & 1 == 0 { Outcome::Plus } else { Outcome::Minus })
        .collect()
}

pub fn record_index(record: &[Outcome]) -> usize {
    record.iter().fold(0, |k, o| (k << 1) | usize::from(*o == Outcome::Minus))
}

/// All `2^l` records of length `l` in index order.
pub fn all_records(l: usize) -> Vec<Vec<Outcome>> {
    (0..1usize << l).map(|k| record_from_index(k, l)).collect()
}

/// Embeds a 4×4 system ⊗ slice gate at slice `l` of an `n`-slice register.
pub fn embed_slice_gate(gate: &ComplexMatrix, n: usize, l: usize) -> ComplexMatrix {
    let dim = 2usize << n;
    let pos = n - l;
    let fixed = !((1usize << n) | (1usize << pos));
    ComplexMatrix::from_fn(dim, |r, c| {
        if (r ^ c) & fixed & (dim - 1) != 0 {
            return ZERO;
        }
        let gr = 2 * (r >> n) + ((r >> pos) & 1);
        let gc = 2 * (c >> n) + ((c >> pos) & 1);
        gate.get(gr, gc)
    })
}

/// `I ⊗ H^{⊗n}`, real, symmetric and its own inverse.
fn slice_hadamards(n: usize) -> ComplexMatrix {
    let dim = 2usize << n;
    let mask = (1usize << n) - 1;
    let norm = (0.5f64).powf(n as f64 / 2.0);
    ComplexMatrix::from_fn(dim, |r, c| {
        if r >> n != c >> n {
            return ZERO;
        }
        let sign = if (r & c & mask).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
        re(sign * norm)
    })
}

/// `ρ ⊗ (ΦΦ*)^{⊗n}`.
fn with_vacuum(rho: &Mat2, n: usize) -> ComplexMatrix {
    let vac = (1usize << n) - 1;
    ComplexMatrix::from_fn(2usize << n, |r, c| {
        if r & vac == vac && c & vac == vac {
            rho[(r >> n, c >> n)]
        } else {
            ZERO
        }
    })
}

/// Full-space evolution of every member of a parameter ensemble.
#[derive(Clone, Debug)]
pub struct FullStateSimulator {
    n: usize,
    lambda: f64,
    coeffs: Vec<InteractionCoefficients>,
    initial: BlockDensityMatrix,
    /// `unitaries[p][l] = U(l)` for parameter `p`, `l = 0..=n`.
    unitaries: Vec<Vec<ComplexMatrix>>,
    hadamard: ComplexMatrix,
}

/// Builds `U(l) = M_l U(l-1)` for `l = 1..=n` from the embedded slice unitaries.
pub fn evolve_full(
    ensemble: &ParameterEnsemble,
    initial: &BlockDensityMatrix,
    n: usize,
) -> Result<FullStateSimulator> {
    if n > MAX_ORACLE_STEPS {
        return Err(Error::Capacity(format!("oracle supports at most {MAX_ORACLE_STEPS} steps, got {n}")));
    }
    if ensemble.len() != initial.len() {
        return Err(Error::InvalidInput("ensemble and initial state sizes differ".into()));
    }
    let dim = 2usize << n;
    let unitaries = ensemble
        .coeffs()
        .iter()
        .map(|c| {
            let gate = c.slice_unitary();
            let mut chain = vec![ComplexMatrix::identity(dim)];
            for l in 1..=n {
                let next = &embed_slice_gate(&gate, n, l) * chain.last().expect("nonempty");
                chain.push(next);
            }
            chain
        })
        .collect();
    Ok(FullStateSimulator {
        n,
        lambda: ensemble.lambda(),
        coeffs: ensemble.coeffs().to_vec(),
        initial: initial.clone(),
        unitaries,
        hadamard: slice_hadamards(n),
    })
}

impl FullStateSimulator {
    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2usize << self.n
    }

    pub fn unitary(&self, param: usize, l: usize) -> &ComplexMatrix {
        &self.unitaries[param][l]
    }

    /// `max_p ‖U_p(N)* U_p(N) − I‖_max`.
    pub fn unitarity_residual(&self) -> f64 {
        let id = ComplexMatrix::identity(self.dim());
        self.unitaries
            .iter()
            .map(|chain| {
                let u = &chain[self.n];
                (&(&u.adjoint() * u) - &id).max_abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn initial_full(&self, param: usize) -> ComplexMatrix {
        with_vacuum(&self.initial.blocks()[param], self.n)
    }

    /// `W U(l) ρ_full U(l)* W` for one parameter.
    fn rotated_state(&self, param: usize, l: usize) -> ComplexMatrix {
        let u = &self.unitaries[param][l];
        let wu = &self.hadamard * u;
        &(&wu * &self.initial_full(param)) * &wu.adjoint()
    }

    /// For every record prefix of length `l`, the pair
    /// `(Tr[ρ U(l)* (X ⊗ ΠP^r) U(l)], Tr[ρ U(l)* (I ⊗ ΠP^r) U(l)])`.
    pub fn prefix_functionals(&self, l: usize, x: &Mat2) -> Vec<(f64, f64)> {
        let n = self.n;
        let mut out = vec![(0.0, 0.0); 1 << l];
        for p in 0..self.coeffs.len() {
            let sigma = self.rotated_state(p, l);
            for t in 0..1usize << n {
                let k = t >> (n - l);
                let mut num = 0.0;
                let mut den = 0.0;
                for s in 0..2 {
                    for s2 in 0..2 {
                        let v = sigma.get((s << n) | t, (s2 << n) | t);
                        num += (x[(s2, s)] * v).re;
                        if s == s2 {
                            den += v.re;
                        }
                    }
                }
                out[k].0 += num;
                out[k].1 += den;
            }
        }
        out
    }

    /// Exact probability of every full-length record, in index order.
    pub fn record_distribution(&self) -> Vec<(Vec<Outcome>, f64)> {
        let id = Mat2::identity();
        self.prefix_functionals(self.n, &id)
            .into_iter()
            .enumerate()
            .map(|(k, (_, p))| (record_from_index(k, self.n), p))
            .collect()
    }

    /// Conditional expectation of the system observable `x` given a record prefix.
    pub fn conditional_expectation(&self, x: &Mat2, record: &[Outcome]) -> Result<f64> {
        let l = record.len();
        if l > self.n {
            return Err(Error::InvalidInput(format!("record length {l} exceeds {}", self.n)));
        }
        let (num, den) = self.prefix_functionals(l, x)[record_index(record)];
        if !(den > 1e-14 * self.initial.total_trace()) {
            return Err(Error::UndefinedConditional(format!("record {record:?} has probability {den}")));
        }
        Ok(num / den)
    }

    /// `Σ_r e^{c K(u_l(r))} ⊗ ΠP^r` over prefixes of length `l`.
    fn record_weight(&self, l: usize, policy: &Policy, c: f64, obs: &Observable) -> ComplexMatrix {
        let n = self.n;
        let blocks: Vec<Mat2> = all_records(l).iter().map(|r| obs.exp_cost(c, policy(r))).collect();
        let rotated = ComplexMatrix::from_fn(self.dim(), |r, col| {
            let (t, t2) = (r & ((1 << n) - 1), col & ((1 << n) - 1));
            if t != t2 {
                return ZERO;
            }
            blocks[t >> (n - l)][(r >> n, col >> n)]
        });
        &(&self.hadamard * &rotated) * &self.hadamard
    }

    /// `U^μ(N)` for one parameter: `U^μ(l) = M_l e^{μ1 λ² K_{l-1}/2} U^μ(l-1)`.
    pub fn risk_unitary(&self, param: usize, policy: &Policy, rp: &RiskParams, obs: &Observable) -> ComplexMatrix {
        let gate = self.coeffs[param].slice_unitary();
        let c = 0.5 * rp.mu1 * self.lambda * self.lambda;
        let mut u = ComplexMatrix::identity(self.dim());
        for l in 1..=self.n {
            if l > 1 {
                u = &self.record_weight(l - 1, policy, c, obs) * &u;
            }
            u = &embed_slice_gate(&gate, self.n, l) * &u;
        }
        u
    }

    /// `V^μ(N)` for one parameter, built from
    /// `V^μ(l) = (I + λ² M∘ + λ M+ ⊗ σx_l) e^{μ1 λ² K_{l-1}/2} V^μ(l-1)`.
    pub fn risk_v(&self, param: usize, policy: &Policy, rp: &RiskParams, obs: &Observable) -> ComplexMatrix {
        let k = &self.coeffs[param];
        let lam = self.lambda;
        let a = Mat2::identity() + k.m_circ * re(lam * lam);
        let b = k.m_plus * re(lam);
        // system ⊗ slice gate (I + λ²M∘) ⊗ I + λM+ ⊗ σx
        let gate = ComplexMatrix::from_fn(4, |r, c| {
            let (sr, ar, sc, ac) = (r / 2, r % 2, c / 2, c % 2);
            let mut v = if ar == ac { a[(sr, sc)] } else { ZERO };
            if ar != ac {
                v += b[(sr, sc)];
            }
            v
        });
        let c = 0.5 * rp.mu1 * lam * lam;
        let mut v = ComplexMatrix::identity(self.dim());
        for l in 1..=self.n {
            if l > 1 {
                v = &self.record_weight(l - 1, policy, c, obs) * &v;
            }
            v = &embed_slice_gate(&gate, self.n, l) * &v;
        }
        v
    }

    /// `Z = U^μ(N)* e^{μ2 K(u_N)} U^μ(N)` for one parameter.
    pub fn risk_operator(&self, param: usize, policy: &Policy, rp: &RiskParams, obs: &Observable) -> ComplexMatrix {
        let u = self.risk_unitary(param, policy, rp, obs);
        let terminal = self.record_weight(self.n, policy, rp.mu2, obs);
        &(&u.adjoint() * &terminal) * &u
    }

    /// The risk-sensitive cost `F = ℙ[R(N)* e^{μ2 |j_N(X_e) − u_N|²} R(N)]`.
    pub fn risk_cost_full(&self, policy: &Policy, rp: &RiskParams, obs: &Observable) -> f64 {
        (0..self.coeffs.len())
            .map(|p| (&self.initial_full(p) * &self.risk_operator(p, policy, rp, obs)).trace().re)
            .sum()
    }

    /// `(ℙ[U^μ* X U^μ], ℙ[V^μ* X V^μ])` for a full-space operator `x`.
    pub fn vmu_identity(&self, x: &ComplexMatrix, policy: &Policy, rp: &RiskParams, obs: &Observable) -> (f64, f64) {
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for p in 0..self.coeffs.len() {
            let rho = self.initial_full(p);
            let u = self.risk_unitary(p, policy, rp, obs);
            let v = self.risk_v(p, policy, rp, obs);
            lhs += (&rho * &(&(&u.adjoint() * x) * &u)).trace().re;
            rhs += (&rho * &(&(&v.adjoint() * x) * &v)).trace().re;
        }
        (lhs, rhs)
    }
}

/// Both sides of `ℙ_true[log Z] ≤ log ℙ_nom[Z] + R(ρ_true‖ρ_nom)`.
///
/// The two simulators must share dynamics and differ only in their initial
/// states. The right side is `+∞` when the entropy is.
pub fn verify_robustness1(
    sim_true: &FullStateSimulator,
    sim_nom: &FullStateSimulator,
    policy: &Policy,
    rp: &RiskParams,
    obs: &Observable,
) -> Result<(f64, f64)> {
    if sim_true.n > 6 {
        return Err(Error::Capacity(format!("robustness check supports N <= 6, got {}", sim_true.n)));
    }
    if sim_true.n != sim_nom.n || sim_true.coeffs.len() != sim_nom.coeffs.len() {
        return Err(Error::InvalidInput("simulators differ in shape".into()));
    }
    let mut lhs = 0.0;
    let mut nom = 0.0;
    for p in 0..sim_true.coeffs.len() {
        let z = sim_true.risk_operator(p, policy, rp, obs);
        let log_z = z.eig_hermitian()?.apply(f64::ln);
        lhs += (&sim_true.initial_full(p) * &log_z).trace().re;
        nom += (&sim_nom.initial_full(p) * &z).trace().re;
    }
    let r = relative_entropy_blocks(&sim_true.initial, &sim_nom.initial)?;
    let rhs = if r.is_infinite { f64::INFINITY } else { nom.ln() + r.value };
    Ok((lhs, rhs))
}
