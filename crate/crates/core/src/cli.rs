//! Command-line front end: `solve`, `collect`, `train`, `eval`, `ablate`
//! and `report`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error or missing
//! file, 3 environment-hash mismatch between artifacts.

use crate::bench::{self, eval_starts, evaluate, EvalSummary, ExperimentSpec, Filtered};
use crate::collect::{self, CollectionPlan, Method};
use crate::envmodels::{Env, EnvConfig, EnvError};
use crate::persist::{self, PersistError};
use crate::policy::{MlpPolicy, TrainConfig};
use crate::reach::{solve_env, ValueFunction};
use crate::report::{self, curves, plot_svg, Metric, ReportError, ReportRow};
use crate::shield::FilterConfig;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "safegil",
    version,
    about = "Reachability-guided imitation learning toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the disturbance-sliced safety value function of an environment.
    Solve(SolveArgs),
    /// Collect expert demonstrations with one of the data-collection methods.
    Collect(CollectArgs),
    /// Fit an MLP policy to a dataset.
    Train(TrainArgs),
    /// Roll out a policy, optionally behind the safety filter.
    Eval(EvalArgs),
    /// Run a method x K x seed sweep from an experiment file.
    Ablate(AblateArgs),
    /// Aggregate report CSVs and render plots.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub vf: Option<PathBuf>,
    /// Number of demonstrations.
    #[arg(short = 'K', long = "demos")]
    pub demos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest injected disturbance bound; the environment's by default.
    #[arg(long)]
    pub dbar_max: Option<f64>,
    /// Training configuration for the interim policies of DART and DAgger.
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub env: PathBuf,
    /// Value function for start rejection and filtering.
    #[arg(long)]
    pub vf: Option<PathBuf>,
    /// Wrap the policy in the least-restrictive safety filter.
    #[arg(long)]
    pub filter: bool,
    /// Filter threshold on the safety value.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(short = 'n', long = "starts", default_value_t = 100)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the summary JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Skip writing per-cell datasets and policies.
    #[arg(long)]
    pub no_artifacts: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment output directory; reads `reports/*.csv`, writes `plots/`.
    #[arg(long)]
    pub dir: PathBuf,
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn mismatch(message: impl Display) -> Self {
        Self {
            code: 3,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        if e.is_missing_file() {
            Self::usage(e)
        } else {
            Self::runtime(e)
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Persist(p) => p.into(),
            ReportError::MixedEnv(..) => Self::mismatch(e),
            e => Self::runtime(e),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match &e {
            EnvError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Self::usage(e),
            _ => Self::runtime(e),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::runtime(e)
            }
        }
    )*};
}
runtime_from!(
    crate::reach::ReachError,
    crate::collect::CollectError,
    crate::policy::PolicyError,
    crate::bench::BenchError
);

type CliResult = Result<(), CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Solve(a) => solve(a),
        Command::Collect(a) => collect(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Report(a) => report(a),
    }
}

fn load_env(path: &Path) -> Result<Env, CliError> {
    let cfg = EnvConfig::load(path).map_err(|e| match e {
        EnvError::Io(io) => CliError::from(PersistError::Io {
            path: path.into(),
            source: io,
        }),
        e => CliError::runtime(format!("{}: {e}", path.display())),
    })?;
    Ok(cfg.build()?)
}

fn load_vf_for(path: &Path, env: &Env) -> Result<ValueFunction, CliError> {
    let vf = persist::load_vf(path, None)?;
    vf.check_env(env)
        .map_err(|e| CliError::mismatch(format!("{}: {e}", path.display())))?;
    vf.check_invariants(Some(env))?;
    Ok(vf)
}

fn check_policy_env(policy: &MlpPolicy, env: &Env) -> CliResult {
    match &policy.provenance.env_hash {
        Some(h) if h != env.hash() => Err(CliError::mismatch(format!(
            "policy was trained on environment {h}, evaluating on {}",
            env.hash()
        ))),
        _ => Ok(()),
    }
}

fn solve(a: SolveArgs) -> CliResult {
    let env = load_env(&a.env)?;
    let vf = solve_env(&env)?;
    persist::save_vf(&a.out, &vf)?;
    let r = &vf.metadata().report;
    println!(
        "solved {}: converged={} horizon={} steps={} final_rate={:e}",
        env.config().name,
        r.converged,
        r.horizon,
        r.steps,
        r.final_rate
    );
    if !r.converged {
        eprintln!("warning: value function did not converge within the horizon cap");
    }
    Ok(())
}

fn collect(a: CollectArgs) -> CliResult {
    let env = load_env(&a.env)?;
    let vf = a.vf.as_deref().map(|p| load_vf_for(p, &env)).transpose()?;
    if a.method.needs_value_function() && vf.is_none() {
        return Err(CliError::usage(format!("--method {} needs --vf", a.method)));
    }
    let mut plan = CollectionPlan::new(a.method, a.demos, &env, a.seed);
    if let Some(d) = a.dbar_max {
        plan.dbar_max = d;
    }
    if let Some(p) = &a.cfg {
        plan.train = persist::load_json(p)?;
    }
    plan.train.seed = a.seed;
    let data = collect::collect(&env, vf.as_ref(), &plan)?;
    persist::save_dataset(&a.out, &data)?;
    println!(
        "collected {} records from {} demonstrations ({} failed)",
        data.len(),
        a.demos,
        data.manifest.failed_demos
    );
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let data = persist::load_dataset(&a.data)?;
    let mut cfg: TrainConfig = match &a.cfg {
        Some(p) => persist::load_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (policy, curve) = collect::train_on_dataset(&data, &cfg)?;
    persist::save_policy(&a.out, &policy)?;
    println!(
        "trained on {} samples, final loss {:e}",
        data.len(),
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let env = load_env(&a.env)?;
    let policy = persist::load_policy(&a.policy)?;
    check_policy_env(&policy, &env)?;
    let vf = a.vf.as_deref().map(|p| load_vf_for(p, &env)).transpose()?;
    if a.starts == 0 {
        return Err(CliError::usage("-n must be at least 1"));
    }
    let margin = env.config().eval_start_margin;
    let starts = eval_starts(&env, vf.as_ref(), margin, a.starts, a.seed)?;
    let results = match (a.filter, &vf) {
        (true, Some(vf)) => {
            let mut cfg = FilterConfig::default();
            if let Some(t) = a.threshold {
                cfg.threshold = t;
            }
            cfg.validate().map_err(CliError::usage)?;
            evaluate(&env, &starts, |_| Filtered::new(&policy, vf, cfg.clone()))?
        }
        (true, None) => return Err(CliError::usage("--filter needs --vf")),
        (false, _) => evaluate(&env, &starts, |_| &policy)?,
    };
    let summary = EvalSummary::from_results(&results, margin);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    println!("{text}");
    if let Some(out) = &a.out {
        persist::save_json(out, &summary)?;
    }
    Ok(())
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(rel)
}

fn ablate(a: AblateArgs) -> CliResult {
    let spec: ExperimentSpec = persist::load_json(&a.spec)?;
    spec.validate().map_err(CliError::usage)?;
    let env_path = spec
        .env
        .as_deref()
        .ok_or_else(|| CliError::usage("experiment names no env"))?;
    let env = load_env(&resolve(&a.spec, env_path))?;
    let needs_vf = spec
        .methods
        .iter()
        .any(|m| m.filter || m.method.needs_value_function());
    let vf = match spec.vf.as_deref() {
        Some(rel) => {
            let path = resolve(&a.spec, rel);
            if path.exists() {
                Some(load_vf_for(&path, &env)?)
            } else {
                eprintln!("solving value function into {}", path.display());
                let vf = solve_env(&env)?;
                persist::save_vf(&path, &vf)?;
                Some(vf)
            }
        }
        None if needs_vf => return Err(CliError::usage("experiment needs a vf path")),
        None => None,
    };
    let output = bench::run_experiment(&env, vf.as_ref(), &spec, !a.no_artifacts)?;
    let rows: Vec<ReportRow> = output.cells.iter().map(ReportRow::from).collect();
    let reports = a.out.join("reports");
    report::write_report(&reports.join(format!("{}.csv", spec.name)), &rows)?;
    write_plots(&a.out.join("plots"), &spec.name, &rows)?;
    for art in &output.artifacts {
        let stem = format!("{}-{}-K{}-s{}", spec.name, art.label, art.k, art.seed);
        persist::save_dataset(
            &a.out.join("datasets").join(format!("{stem}.jsonl")),
            &art.dataset,
        )?;
        persist::save_policy(
            &a.out.join("policies").join(format!("{stem}.json")),
            &art.policy,
        )?;
    }
    print_table(&rows);
    if output.failures.is_empty() {
        return Ok(());
    }
    persist::save_json(
        &reports.join(format!("{}-failures.json", spec.name)),
        &output.failures,
    )?;
    for f in &output.failures {
        eprintln!(
            "cell {:?} K={} seed={} failed: {}",
            f.labels, f.k, f.seed, f.error
        );
    }
    Err(CliError::runtime(format!(
        "{} cells failed",
        output.failures.len()
    )))
}

fn write_plots(dir: &Path, name: &str, rows: &[ReportRow]) -> CliResult {
    for (metric, suffix) in [(Metric::FailureRate, "failure"), (Metric::SafeCost, "cost")] {
        if rows.iter().all(|r| metric.of(r).is_none()) {
            continue;
        }
        let svg = plot_svg(rows, metric, name)?;
        persist::write_atomic(&dir.join(format!("{name}-{suffix}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

fn print_table(rows: &[ReportRow]) {
    let costs = curves(rows, Metric::SafeCost);
    println!(
        "{:<24} {:>5} {:>18} {:>18}",
        "method", "K", "failure", "safe cost"
    );
    for c in curves(rows, Metric::FailureRate) {
        let cost_curve = costs.iter().find(|cc| cc.label == c.label);
        for p in &c.points {
            let cost = cost_curve
                .and_then(|cc| cc.points.iter().find(|q| q.k == p.k))
                .map(|q| format!("{:.3} ± {:.3}", q.stat.mean, q.stat.std))
                .unwrap_or_else(|| "-".into());
            println!(
                "{:<24} {:>5} {:>18} {:>18}",
                c.label,
                p.k,
                format!("{:.3} ± {:.3}", p.stat.mean, p.stat.std),
                cost
            );
        }
    }
}

fn report(a: ReportArgs) -> CliResult {
    let reports = a.dir.join("reports");
    let source = if reports.is_dir() {
        reports
    } else {
        a.dir.clone()
    };
    let entries = std::fs::read_dir(&source).map_err(|e| {
        CliError::from(PersistError::Io {
            path: source.clone(),
            source: e,
        })
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::usage(format!(
            "no report CSVs in {}",
            source.display()
        )));
    }
    let mut all = Vec::new();
    let mut per_file = Vec::new();
    for p in &paths {
        let rows = report::read_report(p)?;
        all.extend(rows.iter().cloned());
        per_file.push((p, rows));
    }
    let hash = report::single_env(&all)?.to_string();
    for (p, rows) in &per_file {
        let name = p.file_stem().unwrap_or_default().to_string_lossy();
        write_plots(&a.dir.join("plots"), &name, rows)?;
        println!("== {name} ({} cells)", rows.len());
        print_table(rows);
    }
    println!("env {hash}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flags_exit_with_usage() {
        assert_eq!(main_with_args(["safegil", "solve", "--bogus"]), 2);
        assert_eq!(main_with_args(["safegil"]), 2);
    }

    #[test]
    fn missing_files_exit_with_usage() {
        let code = main_with_args([
            "safegil",
            "solve",
            "--env",
            "/nonexistent/e.json",
            "--out",
            "/tmp/x.sgvf",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn collect_flags_parse() {
        let cli = Cli::try_parse_from([
            "safegil", "collect", "--method", "safegil", "--env", "e.json", "--vf", "vf.sgvf",
            "-K", "10", "--seed", "3", "--out", "d.jsonl",
        ])
        .unwrap();
        match cli.command {
            Command::Collect(a) => {
                assert_eq!(a.method, Method::Safegil);
                assert_eq!((a.demos, a.seed), (10, 3));
            }
            other => panic!("parsed {other:?}"),
        }
    }
}
