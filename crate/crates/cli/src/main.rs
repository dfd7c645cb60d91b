use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use qrsf::dp::{dp_solve, risk_neutral_policy, suboptimal_policy, uniform_grid};
use qrsf::experiments::{
    beta_sweep, bound_trace, mu1_comparison, observable_space, observable_space_limit, run_paths, summarize,
    write_beta_csv, write_bound_trace_csv, write_manifest, write_path_metrics_csv, ExperimentConfig, Manifest,
    Prepared,
};
use qrsf::filter::{estimate, rn_step, run_risk_neutral, run_suboptimal, FilterState, RiskParams};
use qrsf::matcore::{real2, sigma_y, sigma_z};
use qrsf::model::{BlockDensityMatrix, InteractionCoefficients, ModelKind, ParameterEnsemble};
use qrsf::oracle::{all_records, evolve_full, MAX_ORACLE_STEPS};
use qrsf::robustness::{duality_check, golden_thompson_check, random_density, random_hermitian};
use qrsf::sampler::{path_seed, rng_from_seed, sample_trajectory, sampler_record_probability, write_trajectory_csv};
use qrsf::Error;

const ORACLE_TOL: f64 = 1e-10;
const DP_GAP_TOL: f64 = 1e-10;
const ENTROPY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Verb {
    Simulate,
    Fig1,
    Fig2a,
    Fig2b,
    Fig2c,
    Fig3,
    DpValidate,
    OracleValidate,
    EntropyCheck,
    ObsSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Model {
    Dispersive,
    Spontaneous,
}

/// Quantum filtering and risk-sensitive estimation experiments.
#[derive(Debug, Parser)]
#[command(name = "qrsf", version)]
struct Cli {
    #[arg(value_enum)]
    verb: Verb,
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Preset model when no config is given.
    #[arg(long, value_enum)]
    model: Option<Model>,
    /// Horizon for the exhaustive validations.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, default_value = "qrsf-out")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidInput(_) | Error::Capacity(_) | Error::Json(_) | Error::Io(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type Run = Result<(), Failure>;

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            if let Some(m) = cli.model {
                if model_kind(m) != cfg.model.model {
                    return Err(Failure::Usage("--model disagrees with the config file".into()));
                }
            }
            cfg
        }
        None => preset(cli),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.paths {
        cfg.paths = v;
    }
    if let Some(v) = cli.steps {
        cfg.steps = v;
    }
    if let Some(v) = cli.lambda2 {
        cfg.model.lambda2 = v;
    }
    if let Some(v) = cli.mu1 {
        cfg.mu1 = v;
    }
    if let Some(v) = cli.mu2 {
        cfg.mu2 = v;
    }
    if cli.beta.is_some() && cli.verb != Verb::Fig2a {
        cfg.beta = cli.beta;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn model_kind(m: Model) -> ModelKind {
    match m {
        Model::Dispersive => ModelKind::Dispersive,
        Model::Spontaneous => ModelKind::Spontaneous,
    }
}

fn preset(cli: &Cli) -> ExperimentConfig {
    let spontaneous = cli.verb == Verb::Fig3 || cli.model == Some(Model::Spontaneous);
    let mut cfg = if spontaneous { ExperimentConfig::fig3() } else { ExperimentConfig::fig1() };
    match cli.verb {
        Verb::Fig2a => {
            cfg.paths = 100;
            cfg.mu1 = 0.01;
            cfg.mu2 = 0.05;
        }
        Verb::Fig2b => cfg.paths = 20,
        _ => {}
    }
    cfg
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn finish(mut self, verb: Verb, cfg: &ExperimentConfig) -> Run {
        let text = serde_json::to_string_pretty(cfg).map_err(Error::from)?;
        std::fs::write(self.dir.join("config.json"), text + "\n").map_err(Error::from)?;
        self.written.push("config.json".into());
        let name = "manifest.json".to_string();
        self.written.push(name.clone());
        let m = Manifest {
            verb: verb.to_possible_value().expect("named verb").get_name().to_string(),
            args: std::env::args().skip(1).collect(),
            config: cfg.clone(),
            outputs: self.written,
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_manifest(&self.dir.join(name), &m)?;
        Ok(())
    }
}

fn verdict(ok: bool, line: String) -> Run {
    if ok {
        println!("{line}");
        Ok(())
    } else {
        Err(Failure::Validation(line))
    }
}

fn comparison(cfg: &ExperimentConfig, prep: &Prepared, out: &mut Outputs, assert: bool) -> Run {
    let rp = cfg.risk()?;
    let metrics = run_paths(prep, &rp, cfg.steps, cfg.paths, cfg.seed)?;
    write_path_metrics_csv(out.create("paths.csv")?, &metrics)?;

    let rec = sample_trajectory(
        &prep.setup.true_state,
        &prep.setup.ensemble,
        cfg.steps,
        path_seed(cfg.seed, 0),
        Some(prep.obs.matrix()),
    )?;
    let nom = &prep.setup.nominal_state;
    let rn = run_risk_neutral(nom, &prep.setup.ensemble, &rec.dy, prep.obs.matrix())?;
    let rs = run_suboptimal(nom, &prep.setup.ensemble, &rp, &prep.obs, &rec.dy)?;
    write_trajectory_csv(out.create("trajectory.csv")?, &rec, &rn, &rs)?;

    if cfg.paths < 2 {
        let d = &metrics[0];
        println!("1 path x {} steps: delta rn {:.6}, delta rs {:.6}", cfg.steps, d.delta_rn, d.delta_rs);
        return if assert { Err(Failure::Validation("the paired test needs at least 2 paths".into())) } else { Ok(()) };
    }
    let s = summarize(&metrics)?;
    let mut h = csv_writer(out.create("histogram.csv")?);
    h.write_record(["estimator", "bin_lo", "bin_hi", "count"]).map_err(Error::from)?;
    for (name, hist) in [("rn", &s.histogram_rn), ("rs", &s.histogram_rs)] {
        for (i, count) in hist.counts.iter().enumerate() {
            h.write_record([
                name.to_string(),
                hist.edges[i].to_string(),
                hist.edges[i + 1].to_string(),
                count.to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    h.flush().map_err(Error::from)?;
    let line = format!(
        "{} paths x {} steps: mean delta rn {:.6}, mean delta rs {:.6}, paired t {:.3}, p {:.3e}",
        cfg.paths, cfg.steps, s.mean_rn, s.mean_rs, s.test.t, s.test.p_value
    );
    if assert {
        verdict(s.mean_rs < s.mean_rn && s.test.p_value < 0.05, line)
    } else {
        println!("{line}");
        Ok(())
    }
}

fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn fig2a(cli: &Cli, cfg: &ExperimentConfig, prep: &Prepared, out: &mut Outputs) -> Run {
    let betas: Vec<f64> = match cli.beta {
        Some(b) => vec![b],
        None => (0..=10).map(|i| i as f64 / 10.0).collect(),
    };
    let rows = beta_sweep(prep, &betas, &cfg.risk()?, cfg.steps, cfg.paths, cfg.seed)?;
    write_beta_csv(out.create("beta_sweep.csv")?, &rows)?;
    let table: Vec<String> =
        rows.iter().map(|r| format!("beta {}: rn {:.5} rs {:.5}", r.beta, r.mean_rn, r.mean_rs)).collect();
    let line = format!("{} paths x {} steps: {}", cfg.paths, cfg.steps, table.join("; "));
    match rows.iter().find(|r| r.beta == 1.0) {
        Some(r) => verdict(r.mean_rs < r.mean_rn, line),
        None => {
            println!("{line}");
            Ok(())
        }
    }
}

fn fig2b(cfg: &ExperimentConfig, prep: &Prepared, out: &mut Outputs) -> Run {
    let rp = cfg.risk()?;
    let (mut total, mut ok, mut se, mut sp) = (0usize, 0usize, 0.0, 0.0);
    for k in 0..cfg.paths as u64 {
        let rows = bound_trace(prep, &rp, cfg.steps, path_seed(cfg.seed, k))?;
        if k == 0 {
            write_bound_trace_csv(out.create("bound_trace.csv")?, &rows)?;
        }
        for r in &rows {
            total += 1;
            ok += usize::from(r.eps <= r.eps_prime);
            se += r.eps;
            sp += r.eps_prime;
        }
    }
    let ratio = sp / se;
    verdict(
        ok == total && ratio > 1.0,
        format!("{} paths x {} steps: eps <= eps' at {ok}/{total} steps, mean eps'/mean eps {ratio:.3}", cfg.paths, cfg.steps),
    )
}

fn fig2c(cfg: &ExperimentConfig, prep: &Prepared, out: &mut Outputs) -> Run {
    let a = cfg.risk()?;
    let b = RiskParams::new(0.0, 0.281)?;
    let (sa, sb) = mu1_comparison(prep, &a, &b, cfg.steps, cfg.paths, cfg.seed)?;
    let mut w = csv_writer(out.create("eps_comparison.csv")?);
    w.write_record(["step", "eps_a", "eps_b"]).map_err(Error::from)?;
    for (i, (x, y)) in sa.iter().zip(&sb).enumerate() {
        w.write_record([(i + 1).to_string(), x.to_string(), y.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let ma = sa.iter().sum::<f64>() / sa.len() as f64;
    let mb = sb.iter().sum::<f64>() / sb.len() as f64;
    verdict(
        ma < mb,
        format!(
            "{} paths x {} steps: mean eps ({}, {}) {ma:.6} vs (0, 0.281) {mb:.6}",
            cfg.paths, cfg.steps, cfg.mu1, cfg.mu2
        ),
    )
}

fn horizon(cli: &Cli, default: usize) -> usize {
    cli.n.unwrap_or(default)
}

fn oracle_validate(cli: &Cli, cfg: &ExperimentConfig, out: &mut Outputs) -> Run {
    let n = horizon(cli, 6);
    if n == 0 || n > MAX_ORACLE_STEPS {
        return Err(Failure::Usage(format!("--N must lie in 1..={MAX_ORACLE_STEPS}, got {n}")));
    }
    let lambda = cfg.model.lambda2.sqrt();
    let plus = BlockDensityMatrix::single(real2(0.5, 0.5, 0.5, 0.5))?;
    let mut w = csv_writer(out.create("oracle.csv")?);
    w.write_record(["model", "record", "estimate_filter", "estimate_oracle", "prob_filter", "prob_oracle"])
        .map_err(Error::from)?;
    let (mut worst_e, mut worst_p) = (0.0f64, 0.0f64);
    let g = 0.7;
    for (name, c, x) in [
        ("dispersive", InteractionCoefficients::dispersive_closed_form(g, lambda), sigma_z()),
        ("spontaneous", InteractionCoefficients::spontaneous_closed_form(g, lambda), sigma_y()),
    ] {
        let e = ParameterEnsemble::single(g, c);
        let sim = evolve_full(&e, &plus, n)?;
        let dist = sim.record_distribution();
        for (k, r) in all_records(n).into_iter().enumerate() {
            let mut s = FilterState::new(plus.clone())?;
            for &dy in &r {
                s = rn_step(&s, &e, dy);
            }
            let f = estimate(&s, &x)?;
            let o = sim.conditional_expectation(&x, &r)?;
            let p = sampler_record_probability(&plus, &e, &r)?;
            worst_e = worst_e.max((f - o).abs());
            worst_p = worst_p.max((p - dist[k].1).abs());
            let label: String = r.iter().map(|d| if d.sign() > 0.0 { '+' } else { '-' }).collect();
            w.write_record([name.to_string(), label, f.to_string(), o.to_string(), p.to_string(), dist[k].1.to_string()])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    verdict(
        worst_e <= ORACLE_TOL && worst_p <= ORACLE_TOL,
        format!("N={n}: max estimate gap {worst_e:.3e}, max probability gap {worst_p:.3e}"),
    )
}

fn dp_validate(cli: &Cli, cfg: &ExperimentConfig, prep: &Prepared, out: &mut Outputs) -> Run {
    let n = horizon(cli, 6);
    if n == 0 || n > MAX_ORACLE_STEPS {
        return Err(Failure::Usage(format!("--N must lie in 1..={MAX_ORACLE_STEPS}, got {n}")));
    }
    let rp = cfg.risk()?;
    let ens = &prep.setup.ensemble;
    let nom = &prep.setup.nominal_state;
    let obs = &prep.obs;
    let sub = suboptimal_policy(nom, ens, &rp, obs, n)?;
    let rn = risk_neutral_policy(nom, ens, obs.matrix(), n)?;
    let (lo, hi) = {
        let ev = obs.eigenvalues();
        (ev[0], ev[1])
    };
    let sol = dp_solve(nom, ens, n, &rp, obs, &uniform_grid(lo, hi, 5), &[&sub, &rn])?;
    let sim = evolve_full(ens, nom, n)?;
    let c_sub = sim.risk_cost_full(&sub.as_fn(), &rp, obs);
    let c_rn = sim.risk_cost_full(&rn.as_fn(), &rp, obs);
    let c_dp = sim.risk_cost_full(&sol.policy.as_fn(), &rp, obs);
    let mut w = csv_writer(out.create("dp.csv")?);
    w.write_record(["policy", "cost"]).map_err(Error::from)?;
    for (name, v) in [("dp_value", sol.optimal_cost), ("dp_policy", c_dp), ("suboptimal", c_sub), ("risk_neutral", c_rn)] {
        w.write_record([name.to_string(), v.to_string()]).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    let gap = (c_sub - sol.optimal_cost).min(c_rn - sol.optimal_cost);
    verdict(
        gap >= -DP_GAP_TOL,
        format!(
            "N={n}: dp {:.12}, dp policy {c_dp:.12}, suboptimal {c_sub:.12}, risk-neutral {c_rn:.12}",
            sol.optimal_cost
        ),
    )
}

fn entropy_check(cfg: &ExperimentConfig, out: &mut Outputs) -> Run {
    let mut rng = rng_from_seed(cfg.seed);
    let mut w = csv_writer(out.create("entropy_check.csv")?);
    w.write_record(["instance", "dim", "maximizer_gap", "worst_trial_excess", "gt_lhs", "gt_rhs"])
        .map_err(Error::from)?;
    let (mut gap, mut excess, mut gt) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..cfg.paths {
        let dim = 2 + i % 7;
        let a = random_hermitian(&mut rng, dim);
        let rp = random_density(&mut rng, dim);
        let d = duality_check(&a, &rp, 10, path_seed(cfg.seed, i as u64))?;
        let (l, r) = golden_thompson_check(&a, &rp)?;
        gap = gap.max(d.maximizer_gap);
        excess = excess.max(d.worst_trial_excess);
        gt = gt.max(l - r);
        w.write_record([
            i.to_string(),
            dim.to_string(),
            d.maximizer_gap.to_string(),
            d.worst_trial_excess.to_string(),
            l.to_string(),
            r.to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    verdict(
        gap <= ENTROPY_TOL && excess <= ENTROPY_TOL && gt <= ENTROPY_TOL,
        format!(
            "{} instances: max maximizer gap {gap:.3e}, max trial excess {excess:.3e}, max GT lhs - rhs {gt:.3e}",
            cfg.paths
        ),
    )
}

fn obs_space(cfg: &ExperimentConfig, prep: &Prepared) -> Run {
    let tol = 1e-8;
    let lambda = prep.setup.ensemble.lambda();
    let c = &prep.setup.ensemble.coeffs()[0];
    let p = prep.setup.ensemble.values()[0];
    let discrete = observable_space(c, tol);
    let limit = match cfg.model.model {
        ModelKind::Dispersive => {
            observable_space_limit(|l| Ok(InteractionCoefficients::dispersive_closed_form(p, l)), lambda, tol)?
        }
        ModelKind::Spontaneous => {
            observable_space_limit(|l| Ok(InteractionCoefficients::spontaneous_closed_form(p, l)), lambda, tol)?
        }
        ModelKind::Custom => discrete.clone(),
    };
    let kind = serde_json::to_string(&cfg.model.model).unwrap_or_default();
    let contains = discrete.contains(prep.obs.matrix(), 1e-8);
    println!(
        "model {}: dimension {} (extrapolated {}), estimated observable in space: {contains}",
        kind.trim_matches('"'),
        discrete.dimension,
        limit.dimension
    );
    Ok(())
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig, out: &mut Outputs) -> Run {
    match cli.verb {
        Verb::EntropyCheck => entropy_check(cfg, out),
        Verb::OracleValidate => oracle_validate(cli, cfg, out),
        verb => {
            let prep = cfg.prepare()?;
            match verb {
                Verb::Simulate => comparison(cfg, &prep, out, false),
                Verb::Fig1 | Verb::Fig3 => comparison(cfg, &prep, out, true),
                Verb::Fig2a => fig2a(cli, cfg, &prep, out),
                Verb::Fig2b => fig2b(cfg, &prep, out),
                Verb::Fig2c => fig2c(cfg, &prep, out),
                Verb::DpValidate => dp_validate(cli, cfg, &prep, out),
                Verb::ObsSpace => obs_space(cfg, &prep),
                Verb::EntropyCheck | Verb::OracleValidate => unreachable!(),
            }
        }
    }
}

fn run(cli: &Cli) -> Run {
    let cfg = load_config(cli)?;
    let mut out = Outputs::new(&cli.out)?;
    let res = dispatch(cli, &cfg, &mut out);
    if let Err(Failure::Usage(_)) = res {
        return res;
    }
    out.finish(cli.verb, &cfg)?;
    res
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            println!("FAILED: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
