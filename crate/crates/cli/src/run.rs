//! Subcommand execution and output.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use weakdep::concentration::{
    convex_battery, convex_poincare_check, iid_sampler, path_sampler, talagrand_check, talagrand_hamming_exact,
    tsirelson_check, Sampler, TalagrandVariant,
};
use weakdep::dependence::{
    gamma_from_kernel, subordinated_norm, theorem_constant, tv_gamma, verify_wti, GammaMatrix,
};
use weakdep::measures::{kl_path, PathMeasure};
use weakdep::oracle::{coverage_experiment, theorem_io_residual};
use weakdep::processes::{decay_rate, estimate_gamma, simulate, write_path_csv, Innovation};
use weakdep::report::{finite, ExperimentReport, Verdict};
use weakdep::rng::ChaCha8Rng;
use weakdep::transport::{dual_form_check, wasserstein_path, weak_transport_cost};

use crate::config::{self, GammaSource, LawSpec, SamplerSpec};
use crate::{Check, Cli, CliError, Command};

const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Reports, auxiliary JSON and CSV tables of one run.
struct Outcome {
    reports: Vec<ExperimentReport>,
    details: Value,
    tables: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn single(report: ExperimentReport, details: Value) -> Self {
        Self { reports: vec![report], details, tables: Vec::new() }
    }

    fn table(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.tables.push((name.to_string(), bytes));
        self
    }
}

fn command_name(cmd: &Command) -> String {
    match cmd {
        Command::Transport => "transport".into(),
        Command::Gamma => "gamma".into(),
        Command::Verify { check } => format!("verify {}", schema_of(*check)),
        Command::Oracle => "oracle".into(),
        Command::Simulate => "simulate".into(),
    }
}

fn schema_of(check: Check) -> &'static str {
    match check {
        Check::Wti => "wti",
        Check::Dual => "dual",
        Check::Tsirelson => "tsirelson",
        Check::Poincare => "poincare",
        Check::Talagrand => "talagrand",
    }
}

fn config_path(cli: &Cli) -> Result<&Path, CliError> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))
}

struct Common {
    seed: u64,
    tolerance: f64,
}

fn common(cli: &Cli, seed: Option<u64>, tolerance: Option<f64>) -> Result<Common, CliError> {
    let tolerance = cli.tolerance.or(tolerance).unwrap_or(DEFAULT_TOLERANCE);
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(CliError::Config("tolerance must be finite and nonnegative".into()));
    }
    Ok(Common { seed: cli.seed.or(seed).unwrap_or(0), tolerance })
}

/// Run the selected subcommand; returns whether every report passed.
pub fn execute(cli: &Cli) -> Result<bool, CliError> {
    let path = config_path(cli)?;
    let start = Instant::now();
    let (outcome, seed) = match &cli.command {
        Command::Transport => transport(cli, path)?,
        Command::Gamma => gamma(cli, path)?,
        Command::Verify { check } => verify(cli, path, *check)?,
        Command::Oracle => oracle(cli, path)?,
        Command::Simulate => simulate_path(cli, path)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let mut reports = outcome.reports;
    for r in &mut reports {
        r.wall_time_s = Some(elapsed);
    }
    let all_pass = reports.iter().all(|r| r.verdict.is_pass());
    let mut doc = json!({
        "command": command_name(&cli.command),
        "seed": seed,
        "all_pass": all_pass,
        "reports": reports,
        "details": outcome.details,
    });
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for (name, bytes) in &outcome.tables {
                std::fs::write(dir.join(name), bytes)?;
            }
            std::fs::write(dir.join("report.json"), to_pretty(&doc)?)?;
        }
        None => {
            let tables: serde_json::Map<String, Value> = outcome
                .tables
                .iter()
                .map(|(n, b)| (n.clone(), Value::String(String::from_utf8_lossy(b).into_owned())))
                .collect();
            if !tables.is_empty() {
                doc["tables"] = Value::Object(tables);
            }
            println!("{}", to_pretty(&doc)?);
        }
    }
    Ok(all_pass)
}

fn to_pretty(v: &impl Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))
}

/// Minimal report written when a run fails numerically.
pub fn write_stub(cli: &Cli, message: &str) {
    let doc = json!({
        "command": command_name(&cli.command),
        "seed": cli.seed,
        "all_pass": false,
        "error": message,
        "reports": [],
    });
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
    match &cli.out {
        Some(dir) => {
            let _ = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("report.json"), text));
        }
        None => println!("{text}"),
    }
}

fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn build_law(spec: &LawSpec) -> Result<PathMeasure, CliError> {
    Ok(match spec {
        LawSpec::Single(m) => PathMeasure::single(&m.build()?),
        LawSpec::Path(p) => p.build()?,
    })
}

fn transport(cli: &Cli, path: &Path) -> Result<(Outcome, u64), CliError> {
    let cfg: config::TransportConfig = config::load(path, "transport")?;
    let c = common(cli, cfg.seed, cfg.tolerance)?;
    let (p, q) = (build_law(&cfg.p)?, build_law(&cfg.q)?);
    let mut solver = cfg.solver.clone();
    solver.seed = c.seed;
    let weak = weak_transport_cost(&p, &q, cfg.exponent, &cfg.metric, cfg.markov, &solver)?;
    let classical = wasserstein_path(&p, &q, cfg.exponent, &cfg.metric)?;
    let kl = kl_path(&q, &p)?;
    if !(cfg.constant > 0.0) {
        return Err(CliError::Config("constant must be positive".into()));
    }
    let rhs = (2.0 * cfg.constant * kl).sqrt();
    let verdict = if weak.upper <= rhs + c.tolerance {
        Verdict::Pass
    } else if weak.lower > rhs + c.tolerance {
        Verdict::Fail
    } else {
        Verdict::Inconclusive { gap: weak.upper - rhs }
    };
    let mut report = ExperimentReport::new("transport", "weak-transport-inequality")
        .sides(weak.upper, rhs)
        .verdict(verdict)
        .params(json!({
            "exponent": cfg.exponent, "metric": cfg.metric, "markov": weak.markov,
            "constant": cfg.constant, "tolerance": c.tolerance,
        }))
        .seed(c.seed);
    report.interval = Some([finite(weak.lower), finite(weak.upper)]);
    let rows: Vec<(usize, usize, f64)> = (0..weak.coupling.rows)
        .flat_map(|x| (0..weak.coupling.cols).map(move |y| (x, y)))
        .map(|(x, y)| (x, y, weak.coupling.get(x, y)))
        .filter(|r| r.2 > 0.0)
        .collect();
    let details = json!({
        "weak": {"lower": weak.lower, "upper": weak.upper, "gap": weak.gap(), "gap_closed": weak.gap_closed,
                 "alpha": weak.alpha.values},
        "classical": classical.value,
        "relative_entropy": finite(kl),
    });
    let table = csv_bytes(std::iter::once(("x".to_string(), "y".to_string(), "mass".to_string())).chain(
        rows.iter().map(|(x, y, m)| (x.to_string(), y.to_string(), m.to_string())),
    ))?;
    Ok((Outcome::single(report, details).table("coupling.csv", table), c.seed))
}

fn norms(g: &GammaMatrix) -> Result<[f64; 3], CliError> {
    Ok([
        subordinated_norm(g, 1.0)?,
        subordinated_norm(g, 2.0)?,
        subordinated_norm(g, f64::INFINITY)?,
    ])
}

fn gamma(cli: &Cli, path: &Path) -> Result<(Outcome, u64), CliError> {
    let cfg: config::GammaConfig = config::load(path, "gamma")?;
    let c = common(cli, cfg.seed, cfg.tolerance)?;
    let p = cfg.exponent;
    match &cfg.source {
        GammaSource::Kernel { measure, .. } | GammaSource::Tv { measure } => {
            let pm = measure.build()?;
            let g = match &cfg.source {
                GammaSource::Kernel { metric, perturbation_metric, .. } => gamma_from_kernel(&pm, p, metric, perturbation_metric)?,
                _ => tv_gamma(&pm, p)?,
            };
            let [n1, n2, ninf] = norms(&g)?;
            let constant = match cfg.base_constant {
                Some(base) => Some(theorem_constant(base, &g, p, pm.horizon())?),
                None => None,
            };
            let report = ExperimentReport::new("gamma", "gamma-interpolation")
                .sides(n2 * n2, n1 * ninf)
                .verdict(Verdict::from_bool(n2 * n2 <= n1 * ninf + c.tolerance))
                .params(json!({"exponent": p, "horizon": pm.horizon(), "base_constant": cfg.base_constant}))
                .seed(c.seed);
            let details = json!({
                "gamma": g.entries, "norm_1": n1, "norm_2": n2, "norm_inf": ninf,
                "theorem_constant": constant,
            });
            let n = g.size();
            let rows = (1..=n).flat_map(|k| (1..=n).map(move |i| (k, i))).map(|(k, i)| (k, i, g.gamma(k, i)));
            let table = csv_bytes(
                std::iter::once(("k".to_string(), "i".to_string(), "gamma".to_string()))
                    .chain(rows.map(|(k, i, v)| (k.to_string(), i.to_string(), v.to_string()))),
            )?;
            Ok((Outcome::single(report, details).table("gamma.csv", table), c.seed))
        }
        GammaSource::Simulated { process, horizon, replicates, pairs } => {
            let est = estimate_gamma(process, p, *horizon, *replicates, pairs, c.seed)?;
            let g = GammaMatrix::stationary(horizon + 1, 1.0, &est.gamma, p)?;
            let [n1, n2, ninf] = norms(&g)?;
            let bound = 1.0 + est.s_hat;
            let worst = n1.max(n2).max(ninf);
            let constant = match cfg.base_constant {
                Some(base) => Some(theorem_constant(base, &g, p, horizon + 1)?),
                None => None,
            };
            let fit = if *horizon >= 3 { decay_rate(&est.gamma, 1, *horizon).ok() } else { None };
            let report = ExperimentReport::new("gamma", "stationary-gamma-norm")
                .sides(worst, bound)
                .ses(0.0, est.s_se)
                .verdict(Verdict::from_bool(worst <= bound + c.tolerance))
                .params(json!({"exponent": p, "horizon": horizon, "replicates": replicates, "process": process}))
                .seed(c.seed)
                .note("stationary matrix built from the estimated lags with unit diagonal");
            let details = json!({
                "estimate": est, "norm_1": n1, "norm_2": n2, "norm_inf": ninf,
                "theorem_constant": constant, "decay": fit,
            });
            let table = csv_bytes(
                std::iter::once(("k".to_string(), "gamma".to_string(), "se".to_string())).chain(
                    est.gamma.iter().zip(&est.se).enumerate().map(|(k, (g, s))| ((k + 1).to_string(), g.to_string(), s.to_string())),
                ),
            )?;
            Ok((Outcome::single(report, details).table("gamma.csv", table), c.seed))
        }
    }
}

type BoxedSampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync>;

fn build_sampler(spec: &SamplerSpec) -> Result<(BoxedSampler, usize), CliError> {
    Ok(match spec {
        SamplerSpec::Iid { law, dim } => (Box::new(iid_sampler(*law, *dim)?), *dim),
        SamplerSpec::Process { process, length, start } => {
            let k = process.dimension();
            let start = start.clone().unwrap_or_else(|| vec![0.0; k]);
            (Box::new(path_sampler(process.clone(), *length, start)?), length * k)
        }
    })
}

fn verify(cli: &Cli, path: &Path, check: Check) -> Result<(Outcome, u64), CliError> {
    let schema = schema_of(check);
    match check {
        Check::Wti => {
            let cfg: config::WtiConfig = config::load(path, schema)?;
            let c = common(cli, cfg.seed, cfg.tolerance)?;
            let pm = cfg.measure.build()?;
            let out = verify_wti(
                &pm,
                cfg.exponent,
                &cfg.metric,
                &cfg.perturbation_metric,
                cfg.base_constant,
                cfg.trials,
                c.seed,
                c.tolerance,
                cfg.constant,
                &cfg.solver,
            )?;
            let table = csv_bytes(out.trials.iter().map(|t| TrialRow {
                index: t.index,
                kl: t.kl,
                rhs: t.rhs,
                lower: t.lower,
                upper: t.upper,
            }))?;
            let details = json!({"gamma": out.gamma.entries, "constant": out.constant});
            Ok((Outcome::single(out.report, details).table("trials.csv", table), c.seed))
        }
        Check::Dual => {
            let cfg: config::DualConfig = config::load(path, schema)?;
            let c = common(cli, cfg.seed, cfg.tolerance)?;
            let m = cfg.measure.build()?;
            let reports = cfg
                .cases
                .iter()
                .map(|case| dual_form_check(&m, cfg.constant, cfg.exponent, &cfg.metric, &case.f, &case.alpha, case.lambda, case.inverted))
                .collect::<weakdep::Result<Vec<_>>>()?;
            Ok((Outcome { reports, details: Value::Null, tables: Vec::new() }, c.seed))
        }
        Check::Tsirelson | Check::Poincare => {
            let cfg: config::FunctionalConfig = config::load(path, schema)?;
            let c = common(cli, cfg.seed, cfg.tolerance)?;
            let (sampler, dim) = build_sampler(&cfg.sampler)?;
            if dim < 2 {
                return Err(CliError::Config("the function battery needs at least two coordinates".into()));
            }
            let battery = convex_battery(dim);
            let names: Vec<String> = battery.iter().map(|f| f.name.clone()).collect();
            let mut g = battery
                .into_iter()
                .find(|f| f.name == cfg.function.name)
                .ok_or_else(|| CliError::Config(format!("unknown function `{}`; available: {}", cfg.function.name, names.join(", "))))?;
            if cfg.function.scale != 1.0 {
                g = g.scaled(cfg.function.scale);
            }
            let s: &Sampler = &*sampler;
            let report = if check == Check::Tsirelson {
                tsirelson_check(s, &g, cfg.constant, cfg.samples, c.seed, cfg.slack)?
            } else {
                convex_poincare_check(s, &g, cfg.constant, cfg.samples, c.seed, cfg.slack)?
            };
            Ok((Outcome::single(report, json!({"dimension": dim})), c.seed))
        }
        Check::Talagrand => {
            let cfg: config::TalagrandConfig = config::load(path, schema)?;
            let c = common(cli, cfg.seed, cfg.tolerance)?;
            let set = cfg.set.clone();
            let report = if cfg.exact {
                let SamplerSpec::Iid { law, dim } = &cfg.sampler else {
                    return Err(CliError::Config("exact enumeration needs an iid sampler".into()));
                };
                let atoms = match *law {
                    Innovation::Rademacher => vec![(-1.0, 0.5), (1.0, 0.5)],
                    Innovation::Bernoulli { p } => vec![(0.0, 1.0 - p), (1.0, p)],
                    other => return Err(CliError::Config(format!("exact enumeration needs a discrete law, got {other:?}"))),
                };
                if cfg.variant != TalagrandVariant::HammingDt {
                    return Err(CliError::Config("exact enumeration supports the hamming_dt variant only".into()));
                }
                talagrand_hamming_exact(&vec![atoms; *dim], &|x| set.contains(x), cfg.constant)?
            } else {
                let (sampler, _) = build_sampler(&cfg.sampler)?;
                talagrand_check(&*sampler, &|x| set.contains(x), cfg.constant, cfg.variant, cfg.samples, cfg.hull_cap, c.seed, cfg.slack)?
            };
            Ok((Outcome::single(report, Value::Null), c.seed))
        }
    }
}

#[derive(Serialize)]
struct TrialRow {
    index: u64,
    kl: f64,
    rhs: f64,
    lower: f64,
    upper: f64,
}

fn oracle(cli: &Cli, path: &Path) -> Result<(Outcome, u64), CliError> {
    let cfg: config::OracleConfig = config::load(path, "oracle")?;
    let c = common(cli, cfg.seed, cfg.tolerance)?;
    let risk = cfg.model.oracle()?;
    let cov = coverage_experiment(&cfg.model, &risk, cfg.n, &cfg.params, &cfg.bound, cfg.replications, c.seed)?;
    let mut reports = vec![cov.report];
    if let Some(e) = &cfg.expectation {
        reports.push(theorem_io_residual(&cfg.model, &risk, cfg.n, e.beta, cfg.params.c, e.replicates, c.seed, cfg.slack)?);
    }
    let table = csv_bytes(&cov.rows)?;
    let details = json!({"oracle": risk});
    Ok((Outcome { reports, details, tables: Vec::new() }.table("coverage.csv", table), c.seed))
}

fn simulate_path(cli: &Cli, path: &Path) -> Result<(Outcome, u64), CliError> {
    let cfg: config::SimulateConfig = config::load(path, "simulate")?;
    let c = common(cli, cfg.seed, cfg.tolerance)?;
    let start = cfg.start.clone().unwrap_or_else(|| vec![0.0; cfg.process.dimension()]);
    let xs = simulate(&cfg.process, cfg.length, &start, c.seed)?;
    let mut bytes = Vec::new();
    write_path_csv(&xs, &mut bytes)?;
    let report = ExperimentReport::new("simulate", "")
        .verdict(Verdict::Pass)
        .params(json!({"process": cfg.process, "length": cfg.length, "start": start}))
        .seed(c.seed);
    Ok((Outcome::single(report, json!({"rows": xs.len()})).table("path.csv", bytes), c.seed))
}
