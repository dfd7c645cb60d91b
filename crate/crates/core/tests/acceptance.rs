//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero if any criterion fails.

use std::time::Instant;

use rand::Rng;

use qrsf::dp::{dp_solve, filter_risk_cost, random_policy, risk_neutral_policy, suboptimal_policy, uniform_grid};
use qrsf::experiments::{
    beta_sweep, bound_trace, mu1_comparison, observable_space, observable_space_limit, run_path, run_paths,
    summarize, ExperimentConfig,
};
use qrsf::filter::{
    expanded_rs_update, risk_weight, rn_step, rs_step, run_risk_neutral, run_suboptimal, FilterState, Observable,
    RiskParams,
};
use qrsf::matcore::{min_eigenvalue2, real2, sigma_y, sigma_z, Mat2, C64};
use qrsf::model::{
    build_true_nominal_fig1, BlockDensityMatrix, InteractionCoefficients, Outcome, ParameterEnsemble,
    DEFAULT_LAMBDA2,
};
use qrsf::oracle::{all_records, evolve_full, verify_robustness1};
use qrsf::robustness::{duality_check, golden_thompson_check, random_density, random_hermitian};
use qrsf::sampler::{rng_from_seed, sampler_record_probability};

type Outcome_ = std::result::Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome_>);

fn lambda() -> f64 {
    DEFAULT_LAMBDA2.sqrt()
}

fn check(ok: bool, detail: String) -> Outcome_ {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn plus_state() -> BlockDensityMatrix {
    BlockDensityMatrix::single(real2(0.5, 0.5, 0.5, 0.5)).unwrap()
}

fn random_block(rng: &mut impl Rng) -> Mat2 {
    let mut c = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let m = Mat2::new(c(), c(), c(), c());
    let p = m * m.adjoint();
    p / C64::from(p.trace().re)
}

fn random_coeffs(rng: &mut impl Rng) -> InteractionCoefficients {
    let g = rng.random_range(0.2..1.2);
    if rng.random::<bool>() {
        InteractionCoefficients::dispersive_closed_form(g, lambda())
    } else {
        InteractionCoefficients::spontaneous_closed_form(g, lambda())
    }
}

fn oracle_equivalence() -> Outcome_ {
    let n = 6;
    let mut worst_est = 0.0f64;
    let mut worst_prob = 0.0f64;
    for (c, x) in [
        (InteractionCoefficients::dispersive_closed_form(0.7, lambda()), sigma_z()),
        (InteractionCoefficients::spontaneous_closed_form(0.7, lambda()), sigma_y()),
    ] {
        let e = ParameterEnsemble::single(0.7, c);
        let sim = evolve_full(&e, &plus_state(), n).map_err(|e| e.to_string())?;
        let dist = sim.record_distribution();
        for (k, r) in all_records(n).into_iter().enumerate() {
            let mut s = FilterState::new(plus_state()).unwrap();
            for &dy in &r {
                s = rn_step(&s, &e, dy);
            }
            let f = qrsf::filter::estimate(&s, &x).unwrap();
            let o = sim.conditional_expectation(&x, &r).map_err(|e| e.to_string())?;
            worst_est = worst_est.max((f - o).abs());
            let p = sampler_record_probability(&plus_state(), &e, &r).unwrap();
            worst_prob = worst_prob.max((p - dist[k].1).abs());
        }
    }
    check(
        worst_est <= 1e-10 && worst_prob <= 1e-10,
        format!("max estimate gap {worst_est:.2e}, max probability gap {worst_prob:.2e}"),
    )
}

fn risk_cost_identity() -> Outcome_ {
    let n = 5;
    let rp = RiskParams::new(0.1, 0.182).unwrap();
    let obs = Observable::new(sigma_z()).unwrap();
    let (_, nominal, ens) = build_true_nominal_fig1(DEFAULT_LAMBDA2).unwrap();
    let m = 4;
    let ens = ens.truncate(m);
    let nominal = nominal.truncate(m).normalized().unwrap();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (e, rho) in [
        (ParameterEnsemble::single(0.7, InteractionCoefficients::dispersive_closed_form(0.7, lambda())), plus_state()),
        (ens, nominal),
    ] {
        let sim = evolve_full(&e, &rho, n).unwrap();
        let sub = suboptimal_policy(&rho, &e, &rp, &obs, n).unwrap();
        for pol in [sub, random_policy(n, -1.0, 1.0, 17)] {
            let full = sim.risk_cost_full(&pol.as_fn(), &rp, &obs);
            let filt = filter_risk_cost(&rho, &e, &pol.as_fn(), &rp, &obs, n).unwrap();
            worst = worst.max((full - filt).abs());
            cases += 1;
        }
    }
    check(worst <= 1e-10, format!("{cases} policy/model cases, max |F_full - F_filter| {worst:.2e}"))
}

fn structural_step_identity() -> Outcome_ {
    let mut rng = rng_from_seed(1003);
    let obs = Observable::new(sigma_z()).unwrap();
    let mut worst = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..10_000 {
        let k = random_coeffs(&mut rng);
        let e = ParameterEnsemble::single(1.0, k.clone());
        let rho = random_block(&mut rng);
        let rp = RiskParams::new(rng.random_range(0.0..2.0), 0.182).unwrap();
        let u = rng.random_range(-2.0..2.0);
        let dy = if rng.random::<bool>() { Outcome::Plus } else { Outcome::Minus };
        let mut s = FilterState::new(BlockDensityMatrix::single(rho).unwrap()).unwrap();
        s.step = 1;
        let f = rs_step(&s, &e, &rp, &obs, u, dy).blocks()[0];
        let h = risk_weight(&rho, &rp, &obs, k.lambda2(), u);
        let x = expanded_rs_update(&rho, &h, &k, dy);
        worst = worst.max((f - x).iter().map(|z| z.norm()).fold(0.0, f64::max));
        min_eig = min_eig.min(min_eigenvalue2(&f));
    }
    check(
        worst <= 1e-13 && min_eig >= -1e-12,
        format!("10^4 triples, max entry gap {worst:.2e}, min eigenvalue {min_eig:.2e}"),
    )
}

fn trace_martingale() -> Outcome_ {
    let mut rng = rng_from_seed(1004);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let g = rng.random_range(0.2..1.2);
        let k = if i % 2 == 0 {
            InteractionCoefficients::dispersive_closed_form(g, lambda())
        } else {
            InteractionCoefficients::spontaneous_closed_form(g, lambda())
        };
        let e = ParameterEnsemble::single(g, k);
        let s = FilterState::new(BlockDensityMatrix::single(random_block(&mut rng)).unwrap()).unwrap();
        let avg = 0.5 * (rn_step(&s, &e, Outcome::Plus).total_trace() + rn_step(&s, &e, Outcome::Minus).total_trace());
        worst = worst.max((avg - s.total_trace()).abs());
    }
    check(worst <= 1e-12, format!("10^4 steps, max deviation {worst:.2e}"))
}

fn risk_neutral_limit() -> Outcome_ {
    let cfg = ExperimentConfig::fig1();
    let prep = cfg.prepare().unwrap();
    let rp = RiskParams::new(1e-6, 1e-6).unwrap();
    let mut worst = 0.0f64;
    for k in 0..10 {
        let t = run_path(&prep, &prep.setup.nominal_state, &[], cfg.steps, 500 + k, false).unwrap();
        let nom = &prep.setup.nominal_state;
        let pi = run_risk_neutral(nom, &prep.setup.ensemble, &t.dy, prep.obs.matrix()).unwrap();
        let u = run_suboptimal(nom, &prep.setup.ensemble, &rp, &prep.obs, &t.dy).unwrap();
        worst = worst.max(pi.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst <= 1e-4, format!("10 records of {} steps, sup gap {worst:.2e}", cfg.steps))
}

fn reproduction(cfg: ExperimentConfig) -> Outcome_ {
    let prep = cfg.prepare().unwrap();
    let rp = cfg.risk().unwrap();
    let metrics = run_paths(&prep, &rp, cfg.steps, cfg.paths, cfg.seed).unwrap();
    let s = summarize(&metrics).unwrap();
    check(
        s.mean_rs < s.mean_rn && s.test.p_value < 0.05,
        format!(
            "{} paths x {} steps: mean rn {:.4e}, mean rs {:.4e}, paired t {:.2}, p {:.2e}",
            cfg.paths, cfg.steps, s.mean_rn, s.mean_rs, s.test.t, s.test.p_value
        ),
    )
}

fn beta_sweep_check() -> Outcome_ {
    let cfg = ExperimentConfig::fig1();
    let prep = cfg.prepare().unwrap();
    let rp = RiskParams::new(0.01, 0.05).unwrap();
    let rows = beta_sweep(&prep, &[0.0, 0.5, 1.0], &rp, cfg.steps, 100, 21).unwrap();
    let last = rows.last().unwrap();
    let table: Vec<String> =
        rows.iter().map(|r| format!("b={} rn {:.4} rs {:.4}", r.beta, r.mean_rn, r.mean_rs)).collect();
    check(last.mean_rs < last.mean_rn, format!("100 paths: {}", table.join("; ")))
}

fn bound_check() -> Outcome_ {
    let cfg = ExperimentConfig::fig1();
    let prep = cfg.prepare().unwrap();
    let rp = cfg.risk().unwrap();
    let (mut total, mut ok, mut se, mut sp) = (0usize, 0usize, 0.0, 0.0);
    for k in 0..20 {
        for r in bound_trace(&prep, &rp, cfg.steps, 900 + k).unwrap() {
            total += 1;
            ok += usize::from(r.eps <= r.eps_prime);
            se += r.eps;
            sp += r.eps_prime;
        }
    }
    let ratio = sp / se;
    check(ok == total && ratio > 1.0, format!("{ok}/{total} steps bounded, mean eps'/mean eps {ratio:.2}"))
}

fn mu1_check() -> Outcome_ {
    let cfg = ExperimentConfig::fig1();
    let prep = cfg.prepare().unwrap();
    let a = RiskParams::new(0.1, 0.182).unwrap();
    let b = RiskParams::new(0.0, 0.281).unwrap();
    let (sa, sb) = mu1_comparison(&prep, &a, &b, cfg.steps, 200, 31).unwrap();
    let ma = sa.iter().sum::<f64>() / sa.len() as f64;
    let mb = sb.iter().sum::<f64>() / sb.len() as f64;
    check(ma < mb, format!("200 paths: mean eps (0.1,0.182) {ma:.5} vs (0.0,0.281) {mb:.5}"))
}

fn robustness1_check() -> Outcome_ {
    let n = 4;
    let m = 4;
    let (t, nom, ens) = build_true_nominal_fig1(DEFAULT_LAMBDA2).unwrap();
    let ens = ens.truncate(m);
    let t = t.truncate(m).normalized().unwrap();
    let nom = nom.truncate(m).normalized().unwrap();
    let st = evolve_full(&ens, &t, n).unwrap();
    let sn = evolve_full(&ens, &nom, n).unwrap();
    let rp = RiskParams::new(0.1, 0.182).unwrap();
    let obs = Observable::new(sigma_z()).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20 {
        let pol = random_policy(n, -1.5, 1.5, 7000 + k);
        let (l, r) = verify_robustness1(&st, &sn, &pol.as_fn(), &rp, &obs).map_err(|e| e.to_string())?;
        worst = worst.max(l - r);
    }
    check(worst <= 1e-10, format!("20 random policies, max lhs - rhs {worst:.3e}"))
}

fn duality_gt_check() -> Outcome_ {
    let mut rng = rng_from_seed(1012);
    let (mut gap, mut excess, mut gt) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..1000u64 {
        let dim = 2 + (i as usize % 7);
        let a = random_hermitian(&mut rng, dim);
        let rp = random_density(&mut rng, dim);
        let d = duality_check(&a, &rp, 10, i).map_err(|e| e.to_string())?;
        gap = gap.max(d.maximizer_gap);
        excess = excess.max(d.worst_trial_excess);
        let (l, r) = golden_thompson_check(&a, &rp).map_err(|e| e.to_string())?;
        gt = gt.max(l - r);
    }
    check(
        gap <= 1e-10 && excess <= 1e-10 && gt <= 1e-10,
        format!("1000 instances: max gap {gap:.2e}, max trial excess {excess:.2e}, max GT lhs - rhs {gt:.2e}"),
    )
}

fn dp_dominance() -> Outcome_ {
    let n = 6;
    let (_, nom, ens) = build_true_nominal_fig1(DEFAULT_LAMBDA2).unwrap();
    let rp = RiskParams::new(0.1, 0.182).unwrap();
    let obs = Observable::new(sigma_z()).unwrap();
    let sub = suboptimal_policy(&nom, &ens, &rp, &obs, n).unwrap();
    let rn = risk_neutral_policy(&nom, &ens, obs.matrix(), n).unwrap();
    let sol = dp_solve(&nom, &ens, n, &rp, &obs, &uniform_grid(-1.0, 1.0, 5), &[&sub, &rn]).map_err(|e| e.to_string())?;
    let sim = evolve_full(&ens, &nom, n).unwrap();
    let c_sub = sim.risk_cost_full(&sub.as_fn(), &rp, &obs);
    let c_rn = sim.risk_cost_full(&rn.as_fn(), &rp, &obs);
    let gap = (c_sub - sol.optimal_cost).min(c_rn - sol.optimal_cost);
    check(
        gap >= -1e-10,
        format!("dp {:.12}, suboptimal {c_sub:.12}, risk-neutral {c_rn:.12}", sol.optimal_cost),
    )
}

fn observable_space_check() -> Outcome_ {
    let tol = 1e-8;
    let g = 0.7;
    let d = observable_space(&InteractionCoefficients::dispersive_closed_form(g, lambda()), tol).dimension;
    let s = observable_space(&InteractionCoefficients::spontaneous_closed_form(g, lambda()), tol).dimension;
    let dl = observable_space_limit(|l| Ok(InteractionCoefficients::dispersive_closed_form(g, l)), lambda(), tol)
        .unwrap()
        .dimension;
    let sl = observable_space_limit(|l| Ok(InteractionCoefficients::spontaneous_closed_form(g, l)), lambda(), tol)
        .unwrap()
        .dimension;
    check(
        (d, s, dl, sl) == (2, 3, 2, 3),
        format!("discrete: dispersive {d}, spontaneous {s}; extrapolated: dispersive {dl}, spontaneous {sl}"),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("oracle equivalence N=6", Box::new(oracle_equivalence)),
        ("risk cost identity N=5", Box::new(risk_cost_identity)),
        ("factored vs expanded step", Box::new(structural_step_identity)),
        ("trace martingale", Box::new(trace_martingale)),
        ("risk-neutral limit", Box::new(risk_neutral_limit)),
        ("dispersive comparison", Box::new(|| reproduction(ExperimentConfig::fig1()))),
        ("spontaneous comparison", Box::new(|| reproduction(ExperimentConfig::fig3()))),
        ("uncertainty sweep", Box::new(beta_sweep_check)),
        ("conditional error bound", Box::new(bound_check)),
        ("running-cost weight comparison", Box::new(mu1_check)),
        ("robust cost inequality", Box::new(robustness1_check)),
        ("duality and Golden-Thompson", Box::new(duality_gt_check)),
        ("dynamic programming dominance N=6", Box::new(dp_dominance)),
        ("observable space dimension", Box::new(observable_space_check)),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if let Some(fl) = &filter {
            if !name.contains(fl.as_str()) && fl != &id.to_string() {
                continue;
            }
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS [{id:2}] {name}: {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{id:2}] {name}: {d} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
