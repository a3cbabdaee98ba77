//! `nofob` command-line runner.
//!
//! Exit codes: 0 converged (or all checks passed), 2 stopped at `max-iter`,
//! 1 run or check failure, 64 usage error, 73 output path not writable.

mod config;
mod output;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use nofob::algorithms::{build_solver, AlgorithmKind, Solver};
use nofob::diagnostics::{
    check_fejer, check_mu_bounds, check_separation, compare_trajectories, corrupt_trajectory, fit_rate,
    render_table, CheckReport, MuBounds,
};
use nofob::nofob::{Status, Trajectory};
use nofob::problems::{make_problem, ProblemInstance, ProblemParams, REGISTRY};
use nofob::{Error, Point};
use rayon::prelude::*;

use config::{check_problem, list, parse_algorithm, RunConfig, Settings, StartPoint, UsageError};
use output::{create, write_json, write_trajectory, RunSummary};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_MAX_ITER: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_CANT_CREATE: u8 = 73;

/// Tail of the residual sequence used for the fitted rate.
const RATE_TAIL: f64 = 0.5;

#[derive(Parser)]
#[command(name = "nofob", version, about = "Nonlinear forward-backward splitting with projection correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one problem x algorithm combination.
    Solve(RunArgs),
    /// Run, then verify the Fejer, separation and step-size invariants.
    Check(RunArgs),
    /// Run a grid of combinations concurrently and summarize.
    Bench(BenchArgs),
    /// List registered problems and algorithms.
    List,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// File of `key = value` settings; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra `key=value` setting (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    /// Step: `v`, or `a:b` alternating between even and odd iterations.
    #[arg(long)]
    gamma: Option<String>,
    /// Block steps, comma separated.
    #[arg(long)]
    tau: Option<String>,
    /// Relaxation: `v` or `a:b`.
    #[arg(long)]
    theta: Option<String>,
    /// Slack in the step-size bounds.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// Problem seed; `NOFOB_SEED` overrides it.
    #[arg(long)]
    seed: Option<String>,
    /// Trajectory CSV output.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// JSON summary output.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Starting point: ones, zeros or oracle.
    #[arg(long)]
    x0: Option<String>,
    /// Shift the iterate at this index before checking (negative control).
    #[arg(long = "corrupt-iter")]
    corrupt_iter: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    angle: Option<String>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    coupling: Option<String>,
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory for per-run trajectory CSVs.
    #[arg(long = "csv-dir", value_name = "DIR")]
    csv_dir: Option<PathBuf>,
}

/// Reasons a command stops early, with their exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    CantCreate(String),
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::CantCreate(_) => EXIT_CANT_CREATE,
            Failure::Run(_) => EXIT_FAIL,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::CantCreate(m) | Failure::Run(m) => m,
        }
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

/// Parameter and compatibility errors are configuration mistakes; the rest are run failures.
fn from_core(e: Error) -> Failure {
    match e {
        Error::InvalidParameter(_) | Error::Incompatible(_) => Failure::Usage(e.to_string()),
        other => Failure::Run(other.to_string()),
    }
}

fn cant_create(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::CantCreate(format!("cannot write {}: {e}", path.display()))
}

fn settings(args: &RunArgs) -> Result<Settings, Failure> {
    let mut s = match &args.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    for pair in &args.set {
        s.set_pair(pair)?;
    }
    let flags: [(&str, Option<String>); 19] = [
        ("problem", args.problem.clone()),
        ("algorithm", args.algorithm.clone()),
        ("gamma", args.gamma.clone()),
        ("tau", args.tau.clone()),
        ("theta", args.theta.clone()),
        ("eps", args.eps.clone()),
        ("tol", args.tol.clone()),
        ("max-iter", args.max_iter.clone()),
        ("seed", args.seed.clone()),
        ("csv", args.csv.as_ref().map(|p| p.display().to_string())),
        ("report", args.report.as_ref().map(|p| p.display().to_string())),
        ("x0", args.x0.clone()),
        ("corrupt-iter", args.corrupt_iter.clone()),
        ("n", args.n.clone()),
        ("m", args.m.clone()),
        ("lambda", args.lambda.clone()),
        ("angle", args.angle.clone()),
        ("scale", args.scale.clone()),
        ("coupling", args.coupling.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, &v)?;
        }
    }
    s.apply_env()?;
    Ok(s)
}

/// A finished run with everything needed to report on it.
struct Outcome {
    inst: ProblemInstance,
    solver: Solver,
    traj: Trajectory,
}

fn start_point(inst: &ProblemInstance, x0: StartPoint) -> Point {
    match x0 {
        StartPoint::Ones => inst.default_x0(),
        StartPoint::Zeros => Point::zeros(inst.dim()),
        StartPoint::Oracle => inst.oracle.clone(),
    }
}

fn execute(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let inst = make_problem(&cfg.problem, &cfg.params).map_err(from_core)?;
    let solver = build_solver(cfg.algorithm, &inst, &cfg.alg).map_err(from_core)?;
    let x0 = start_point(&inst, cfg.x0);
    let traj = solver.run(&x0, cfg.tol, cfg.max_iter).map_err(from_core)?;
    if let Some(e) = &traj.error {
        log::error!("{}/{}: {e}", cfg.problem, cfg.algorithm);
    }
    Ok(Outcome { inst, solver, traj })
}

fn status_code(status: Status) -> u8 {
    match status {
        Status::Converged => EXIT_OK,
        Status::MaxIter => EXIT_MAX_ITER,
        Status::Error => EXIT_FAIL,
    }
}

fn final_residual(traj: &Trajectory) -> f64 {
    traj.records.last().map_or(f64::NAN, |r| r.residual_s)
}

fn rate(traj: &Trajectory) -> Option<f64> {
    fit_rate(&traj.residuals(), RATE_TAIL).ok().map(|(slope, _)| slope)
}

fn summary(cfg: &RunConfig, out: &Outcome, checks: Vec<CheckReport>) -> RunSummary {
    RunSummary {
        problem: cfg.problem.clone(),
        algorithm: cfg.algorithm.to_string(),
        seed: cfg.params.seed,
        status: out.traj.status.to_string(),
        iterations: out.traj.records.len(),
        final_residual: final_residual(&out.traj),
        dist_to_oracle: out.solver.metric_s().norm(&(&out.traj.final_x - &out.inst.oracle)),
        fitted_rate: rate(&out.traj),
        checks,
    }
}

/// Output files are opened before the run so that a bad path costs nothing.
struct Sinks {
    csv: Option<(PathBuf, fs::File)>,
    report: Option<PathBuf>,
}

impl Sinks {
    fn open(cfg: &RunConfig) -> Result<Self, Failure> {
        let csv = match &cfg.csv {
            Some(p) => Some((p.clone(), create(p).map_err(|e| cant_create(p, e))?)),
            None => None,
        };
        if let Some(p) = &cfg.report {
            create(p).map_err(|e| cant_create(p, e))?;
        }
        Ok(Sinks {
            csv,
            report: cfg.report.clone(),
        })
    }

    fn write(self, out: &Outcome, summary: &RunSummary) -> Result<(), Failure> {
        if let Some((path, file)) = self.csv {
            write_trajectory(BufWriter::new(file), &out.traj, &out.inst.oracle, out.solver.metric_s())
                .map_err(|e| cant_create(&path, e))?;
        }
        if let Some(path) = self.report {
            write_json(&path, summary).map_err(|e| cant_create(&path, e))?;
        }
        Ok(())
    }
}

fn cmd_solve(args: &RunArgs) -> Result<u8, Failure> {
    let cfg = RunConfig::from_settings(&settings(args)?)?;
    if cfg.corrupt_iter.is_some() {
        return Err(Failure::Usage("corrupt-iter only applies to check".into()));
    }
    let sinks = Sinks::open(&cfg)?;
    let out = execute(&cfg)?;
    let s = summary(&cfg, &out, Vec::new());
    sinks.write(&out, &s)?;
    println!(
        "{}/{}: {} after {} iterations, residual {:.3e}, distance to oracle {:.3e}",
        s.problem, s.algorithm, s.status, s.iterations, s.final_residual, s.dist_to_oracle
    );
    Ok(status_code(out.traj.status))
}

/// The other projective-splitting form, run for the same number of iterations.
fn ps_twin(cfg: &RunConfig, out: &Outcome) -> Result<Option<CheckReport>, Failure> {
    let twin = match cfg.algorithm {
        AlgorithmKind::PsExplicit => AlgorithmKind::PsResolvent,
        AlgorithmKind::PsResolvent => AlgorithmKind::PsExplicit,
        _ => return Ok(None),
    };
    let solver = build_solver(twin, &out.inst, &cfg.alg).map_err(from_core)?;
    let x0 = start_point(&out.inst, cfg.x0);
    let other = solver
        .run(&x0, f64::MIN_POSITIVE, out.traj.records.len().max(1))
        .map_err(from_core)?;
    compare_trajectories(&out.traj, &other).map(Some).map_err(from_core)
}

fn cmd_check(args: &RunArgs) -> Result<u8, Failure> {
    let cfg = RunConfig::from_settings(&settings(args)?)?;
    let sinks = Sinks::open(&cfg)?;
    let mut out = execute(&cfg)?;
    if let Some(k) = cfg.corrupt_iter {
        out.traj = corrupt_trajectory(&out.traj, k, 1.0).map_err(from_core)?;
        info!("shifted iterate {k} by 1 in every coordinate");
    }
    let view = &out.solver.view;
    let oracle = &out.inst.oracle;
    let mut reports = Vec::new();
    if !out.traj.records.is_empty() {
        reports.push(check_fejer(&out.traj, oracle, out.solver.metric_s()).map_err(from_core)?);
        reports.push(check_separation(&out.traj, view, oracle).map_err(from_core)?);
        reports.push(check_mu_bounds(&out.traj, &MuBounds::from_view(view)).map_err(from_core)?);
    }
    if cfg.corrupt_iter.is_none() {
        reports.extend(ps_twin(&cfg, &out)?);
    }
    let s = summary(&cfg, &out, reports.clone());
    sinks.write(&out, &s)?;
    print!("{}", render_table(&reports));
    match s.fitted_rate {
        Some(r) => println!("fitted rate {r:.6} over the last half of {} iterations", s.iterations),
        None => println!("fitted rate unavailable ({} iterations)", s.iterations),
    }
    println!("{}/{}: {}", s.problem, s.algorithm, s.status);
    let ok = out.traj.status != Status::Error && !reports.is_empty() && reports.iter().all(|r| r.passed);
    Ok(if ok { EXIT_OK } else { EXIT_FAIL })
}

struct BenchRow {
    cfg: RunConfig,
    gamma: String,
    result: Result<(Status, usize, f64, Option<f64>), Failure>,
}

impl BenchRow {
    fn code(&self) -> u8 {
        match &self.result {
            Ok((status, ..)) => status_code(*status),
            Err(f) => f.code(),
        }
    }
}

fn bench_one(cfg: RunConfig, gamma: String, csv: Option<PathBuf>) -> BenchRow {
    let result = execute(&cfg).and_then(|out| {
        if let Some(path) = &csv {
            let file = create(path).map_err(|e| cant_create(path, e))?;
            write_trajectory(BufWriter::new(file), &out.traj, &out.inst.oracle, out.solver.metric_s())
                .map_err(|e| cant_create(path, e))?;
        }
        Ok((out.traj.status, out.traj.records.len(), final_residual(&out.traj), rate(&out.traj)))
    });
    BenchRow { cfg, gamma, result }
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, Failure> {
    let mut base = settings(&args.run)?;
    if base.get("csv").is_some() || base.get("corrupt-iter").is_some() {
        return Err(Failure::Usage("bench writes per-run CSVs with --csv-dir; csv and corrupt-iter are not allowed".into()));
    }
    let problems = list(&base, "problem");
    let algorithms = list(&base, "algorithm");
    let gammas = list(&base, "gamma");
    if problems.is_empty() || algorithms.is_empty() {
        return Err(Failure::Usage("empty grid: give at least one problem and one algorithm".into()));
    }
    for p in &problems {
        check_problem(p)?;
    }
    for a in &algorithms {
        parse_algorithm(a)?;
    }
    let report = base.remove("report").map(PathBuf::from);
    if let Some(dir) = &args.csv_dir {
        fs::create_dir_all(dir).map_err(|e| cant_create(dir, e))?;
    }
    if let Some(p) = &report {
        create(p).map_err(|e| cant_create(p, e))?;
    }
    let gamma_axis: Vec<Option<String>> = if gammas.is_empty() {
        vec![None]
    } else {
        gammas.into_iter().map(Some).collect()
    };
    let mut jobs = Vec::new();
    for p in &problems {
        for a in &algorithms {
            for g in &gamma_axis {
                let mut s = base.clone();
                s.set("problem", p)?;
                s.set("algorithm", a)?;
                if let Some(g) = g {
                    s.set("gamma", g)?;
                }
                let cfg = RunConfig::from_settings(&s)?;
                let csv = args
                    .csv_dir
                    .as_ref()
                    .map(|d| d.join(format!("{:03}_{p}_{a}.csv", jobs.len())));
                jobs.push((cfg, g.clone().unwrap_or_else(|| "default".into()), csv));
            }
        }
    }
    let rows: Vec<BenchRow> = jobs
        .into_par_iter()
        .map(|(cfg, gamma, csv)| bench_one(cfg, gamma, csv))
        .collect();
    println!(
        "{:<18} {:<13} {:>9} {:>9} {:>7} {:>12} {:>10}",
        "problem", "algorithm", "gamma", "status", "iters", "residual", "rate"
    );
    let mut json = Vec::new();
    for row in &rows {
        let (p, a) = (&row.cfg.problem, row.cfg.algorithm.name());
        match &row.result {
            Ok((status, iters, res, r)) => {
                let rate = r.map_or("-".to_string(), |v| format!("{v:.5}"));
                println!("{p:<18} {a:<13} {:>9} {:>9} {iters:>7} {res:>12.4e} {rate:>10}", row.gamma, status.to_string());
                json.push(serde_json::json!({
                    "problem": p, "algorithm": a, "gamma": row.gamma, "status": status.to_string(),
                    "iterations": iters, "final_residual": res, "fitted_rate": r,
                }));
            }
            Err(f) => {
                println!("{p:<18} {a:<13} {:>9} {:>9} error: {}", row.gamma, "error", f.message());
                json.push(serde_json::json!({
                    "problem": p, "algorithm": a, "gamma": row.gamma, "status": "error", "error": f.message(),
                }));
            }
        }
    }
    if let Some(p) = &report {
        write_json(p, &json).map_err(|e| cant_create(p, e))?;
    }
    Ok(rows.iter().map(BenchRow::code).max().unwrap_or(EXIT_OK))
}

fn cmd_list() -> Result<u8, Failure> {
    println!("problems:");
    for name in REGISTRY {
        let inst = make_problem(name, &ProblemParams::default()).map_err(from_core)?;
        let c = &inst.constants;
        let compatible: Vec<&str> = AlgorithmKind::ALL
            .iter()
            .filter(|k| build_solver(**k, &inst, &Default::default()).is_ok())
            .map(|k| k.name())
            .collect();
        println!(
            "  {name:<18} dim {:>3}  L_D {:.3}  beta_E {:.3}  ||K|| {:.3}  algorithms: {}",
            inst.dim(),
            c.l_d,
            c.beta_e,
            c.k_norm,
            compatible.join(" ")
        );
    }
    println!("algorithms:");
    for k in AlgorithmKind::ALL {
        println!("  {k}");
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Check(a) => cmd_check(a),
        Command::Bench(a) => cmd_bench(a),
        Command::List => cmd_list(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("nofob: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::fmt_f64;

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "problem = rotation\nalgorithm = fbf\ngamma = 0.3\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            gamma: Some("0.7".into()),
            ..Default::default()
        };
        let s = settings(&args).unwrap();
        assert_eq!(s.get("gamma"), Some("0.7"));
        assert_eq!(s.get("algorithm"), Some("fbf"));
    }

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(from_core(Error::Incompatible("x".into())).code(), EXIT_USAGE);
        assert_eq!(from_core(Error::NonFinite { iter: 3 }).code(), EXIT_FAIL);
    }

    #[test]
    fn fmt_keeps_full_precision() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }
}
