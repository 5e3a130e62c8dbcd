//! The `mrq` command line.
//!
//! Every subcommand prints a human-readable table on stdout and, with
//! `--out`, writes a machine-readable artifact. Artifacts depend only on the
//! flags, so reruns with the same seed are byte-identical. Exit codes: 0 ok,
//! 1 I/O failure, 2 usage, 3 validation, 4 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mrq_core::dp::{read_table, value_iteration, write_table, DpConfig, LookupPolicy};
use mrq_core::eval::{
    compare, evaluate, from_json, record_trajectory, render_comparison, render_report, to_json,
    ComparisonReport, EvalReport, REPORT_VERSION,
};
use mrq_core::scenario::{
    generate_scenario, load_scenario, rate_histogram, render_scenario, validate_scenario, GenSpec,
    UNITS_PER_RATE,
};
use mrq_core::{
    exhaustive_wrap, EslDecider, Policy, RandomDecider, ScenarioConfig, StayPutDecider,
};
use mrq_eaac::{train, CurveRow, EaacError, EaacModel, EaacPolicy, TrainConfig};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const POLICIES: [&str; 5] = ["esl", "random", "stay", "dp", "eaac"];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<mrq_core::Error> for CliError {
    fn from(e: mrq_core::Error) -> Self {
        match e {
            mrq_core::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<EaacError> for CliError {
    fn from(e: EaacError) -> Self {
        match e {
            EaacError::Core(c) => c.into(),
            EaacError::Io(e) => CliError::Io(e.to_string()),
            EaacError::NonFinite(_) | EaacError::Nn(mrq_nn::NnError::NonFinite(_)) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mrq", version, about = "Mobile-robot queue scheduling: DP, baselines and EA-AC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw an asymmetric rate vector under a fixed total load.
    GenScenario(GenArgs),
    /// Solve a small instance exactly by value iteration.
    SolveDp(DpArgs),
    /// Train an EA-AC policy with PPO.
    Train(TrainArgs),
    /// Run one episode and write its trajectory.
    Simulate(SimArgs),
    /// Replicated evaluation with 95% confidence intervals.
    Evaluate(EvalArgs),
    /// Compare two evaluation reports of the same scenario.
    Compare(CompareArgs),
    /// Emit CSV series for rate histograms and queue-length comparisons.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    robots: usize,
    #[arg(long)]
    queues: usize,
    #[arg(long)]
    load: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    lambda_min: f64,
    #[arg(long, default_value_t = 0.6)]
    lambda_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenario name; derived from the flags when omitted.
    #[arg(long)]
    name: Option<String>,
    /// Scenario file to write; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DpArgs {
    /// Built-in name (s1..s5) or scenario file.
    #[arg(long)]
    scenario: String,
    /// Truncation cap; 15 for one robot, 12 otherwise when omitted.
    #[arg(long)]
    cap: Option<u32>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    /// Let busy robots idle or switch as well.
    #[arg(long)]
    full_admissible: bool,
    /// Accepted for uniformity; value iteration draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Binary value table to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON solve summary to write.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for checkpoints, the curve CSV and the summary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    clip: f64,
    #[arg(long, default_value_t = 0.95)]
    gae_lambda: f64,
    #[arg(long, default_value_t = 4)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    minibatch: usize,
    #[arg(long, default_value_t = 8)]
    episodes: usize,
    /// Rollout length; the scenario horizon when omitted.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 0.5)]
    value_coef: f64,
    #[arg(long, default_value_t = 1e-3)]
    entropy_coef: f64,
    #[arg(long, default_value_t = 0.5)]
    grad_clip: f64,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    /// One of esl, random, stay, dp, eaac.
    #[arg(long)]
    policy: String,
    /// Checkpoint for `eaac`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Value table for `dp`; solved on the fly when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectory CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 500)]
    runs: usize,
    /// Base seed; run `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    chal: PathBuf,
    /// Require common seeds and report paired intervals.
    #[arg(long)]
    paired: bool,
    /// Accepted for uniformity; comparison is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    scenario: String,
    /// Evaluation reports of this scenario to tabulate.
    #[arg(long, num_args = 0..)]
    reports: Vec<PathBuf>,
    /// Accepted for uniformity; plot data is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the CSV files.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error[{}]: {}", e.kind(), e.message());
            e.code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::GenScenario(a) => gen_scenario(a, out, err),
        Command::SolveDp(a) => solve_dp(a, out, err),
        Command::Train(a) => train_cmd(a, out, err),
        Command::Simulate(a) => simulate(a, out, err),
        Command::Evaluate(a) => evaluate_cmd(a, out, err),
        Command::Compare(a) => compare_cmd(a, out),
        Command::PlotData(a) => plot_data(a, out),
    }
}

fn scenario(spec: &str, err: &mut dyn Write) -> CliResult<ScenarioConfig> {
    let cfg = load_scenario(spec)?;
    for w in validate_scenario(&cfg).warnings {
        writeln!(err, "warning: {w}")?;
    }
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn gen_scenario(a: GenArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let spec = GenSpec {
        robots: a.robots,
        queues: a.queues,
        load: a.load,
        lambda_min: a.lambda_min,
        lambda_max: a.lambda_max,
        alpha: a.alpha,
        seed: a.seed,
    };
    let name = a
        .name
        .unwrap_or_else(|| format!("gen-m{}-n{}-rho{}-s{}", a.robots, a.queues, a.load, a.seed));
    let cfg = generate_scenario(&spec, &name)?;
    for w in validate_scenario(&cfg).warnings {
        writeln!(err, "warning: {w}")?;
    }
    let text = render_scenario(&cfg);
    match a.out {
        Some(p) => {
            write_file(&p, text.as_bytes())?;
            writeln!(out, "scenario {name}: {} robots, {} queues, total rate {:.2}", cfg.num_robots, cfg.num_queues, cfg.arrival_rates.iter().sum::<f64>())?;
            writeln!(out, "{:>6}{:>8}", "queue", "rate")?;
            for (i, p) in cfg.arrival_rates.iter().enumerate() {
                writeln!(out, "{i:>6}{p:>8.2}")?;
            }
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSummary {
    pub version: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub cap: u32,
    pub full_admissible: bool,
    pub states: usize,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Optimal discounted cost from the empty state.
    pub value_empty: f64,
}

fn solve_dp(a: DpArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = scenario(&a.scenario, err)?;
    let mut dp = DpConfig::for_scenario(&cfg);
    if let Some(c) = a.cap {
        dp.cap = c;
    }
    dp.tol = a.tol;
    dp.max_iters = a.max_iters;
    dp.full_admissible = a.full_admissible;
    let (ix, table) = value_iteration(&cfg, &dp)?;
    let empty = ix.encode(&mrq_core::SystemState::empty(&cfg)).expect("empty state is in range");
    let summary = DpSummary {
        version: REPORT_VERSION,
        scenario: cfg.name.clone(),
        scenario_hash: format!("{:016x}", cfg.hash()),
        cap: dp.cap,
        full_admissible: dp.full_admissible,
        states: ix.len(),
        iterations: table.iterations,
        residual: table.residual,
        converged: table.converged,
        value_empty: table.values[empty],
    };
    if let Some(p) = &a.out {
        let mut buf = Vec::new();
        write_table(&mut buf, &table)?;
        write_file(p, &buf)?;
    }
    if let Some(p) = &a.report {
        write_file(p, to_json(&summary).as_bytes())?;
    }
    writeln!(out, "value iteration on {} (cap {}, {} states)", cfg.name, dp.cap, ix.len())?;
    writeln!(out, "{:<24}{:>16}", "sweeps", table.iterations)?;
    writeln!(out, "{:<24}{:>16.3e}", "final residual", table.residual)?;
    writeln!(out, "{:<24}{:>16.4}", "V*(empty)", summary.value_empty)?;
    if !table.converged {
        return Err(CliError::Numeric(format!(
            "value iteration stopped after {} sweeps with residual {:.3e} > {:.1e}",
            table.iterations, table.residual, dp.tol
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub version: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub config: TrainConfig,
    pub checkpoints: Vec<String>,
    pub last: Option<CurveRow>,
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = scenario(&a.scenario, err)?;
    let tc = TrainConfig {
        lr: a.lr,
        clip: a.clip,
        value_coef: a.value_coef,
        entropy_coef: a.entropy_coef,
        grad_clip: a.grad_clip,
        gae_lambda: a.gae_lambda,
        epochs: a.epochs,
        minibatch: a.minibatch,
        episodes: a.episodes,
        horizon: a.horizon,
        iterations: a.iters,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
    };
    tc.check()?;
    let start = Instant::now();
    let outcome = train(&cfg, &tc, Some(&a.out), |row| {
        let _ = writeln!(
            err,
            "iter {:>5}  cost {:>10.3}  actor {:+.4}  value {:.4}  entropy {:.4}  clip {:.3}  [{:.0}s]",
            row.iteration,
            row.mean_cost,
            row.actor_loss,
            row.value_loss,
            row.entropy,
            row.clip_fraction,
            start.elapsed().as_secs_f64()
        );
    })?;
    let summary = TrainSummary {
        version: REPORT_VERSION,
        scenario: cfg.name.clone(),
        scenario_hash: format!("{:016x}", cfg.hash()),
        config: tc,
        checkpoints: outcome
            .checkpoints
            .iter()
            .map(|p| p.file_name().expect("checkpoint file").to_string_lossy().into_owned())
            .collect(),
        last: outcome.curve.last().copied(),
    };
    write_file(&a.out.join("train.json"), to_json(&summary).as_bytes())?;
    writeln!(out, "trained {} iterations on {}", summary.config.iterations, cfg.name)?;
    if let Some(r) = summary.last {
        writeln!(out, "{:<28}{:>12.3}", "last sampled mean cost", r.mean_cost)?;
        writeln!(out, "{:<28}{:>12.4}", "last entropy", r.entropy)?;
    }
    writeln!(out, "final checkpoint {}", a.out.join(mrq_eaac::ppo::FINAL_CHECKPOINT).display())?;
    Ok(())
}

fn build_policy(p: &PolicyArgs, cfg: &ScenarioConfig, err: &mut dyn Write) -> CliResult<Box<dyn Policy>> {
    let needs = |flag: &str, want: &str| -> CliResult<()> {
        Err(CliError::Usage(format!("--{flag} only applies to --policy {want}")))
    };
    if p.ckpt.is_some() && p.policy != "eaac" {
        needs("ckpt", "eaac")?;
    }
    if p.table.is_some() && p.policy != "dp" {
        needs("table", "dp")?;
    }
    Ok(match p.policy.as_str() {
        "esl" => Box::new(exhaustive_wrap(EslDecider)),
        "random" => Box::new(exhaustive_wrap(RandomDecider)),
        "stay" => Box::new(exhaustive_wrap(StayPutDecider)),
        "dp" => {
            let (ix, table) = match &p.table {
                Some(path) => {
                    let f = std::fs::File::open(path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    read_table(std::io::BufReader::new(f), Some(cfg.hash()))?
                }
                None => {
                    writeln!(err, "solving the DP for {} ...", cfg.name)?;
                    let (ix, table) = value_iteration(cfg, &DpConfig::for_scenario(cfg))?;
                    if !table.converged {
                        return Err(CliError::Numeric("value iteration did not converge".into()));
                    }
                    (ix, table)
                }
            };
            Box::new(LookupPolicy::new(ix, table))
        }
        "eaac" => {
            let path = p
                .ckpt
                .as_ref()
                .ok_or_else(|| CliError::Usage("--policy eaac requires --ckpt PATH".into()))?;
            Box::new(EaacPolicy::new(EaacModel::load(path, cfg)?))
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown policy `{other}`; expected one of {}",
                POLICIES.join(", ")
            )))
        }
    })
}

fn simulate(a: SimArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = scenario(&a.scenario, err)?;
    let policy = build_policy(&a.policy, &cfg, err)?;
    let (metrics, series) = record_trajectory(&cfg, &*policy, a.seed)?;
    if let Some(p) = &a.out {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string(), "holding_cost".to_string()];
        header.extend((0..cfg.num_queues).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (t, x) in series.iter().enumerate() {
            let mut rec = vec![t.to_string(), x.iter().map(|&v| v as u64).sum::<u64>().to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        write_file(p, &bytes)?;
    }
    writeln!(out, "policy {}  scenario {}  seed {}", policy.name(), cfg.name, a.seed)?;
    writeln!(out, "{:<22}{:>14.4}", "discounted cost", metrics.discounted_cost)?;
    writeln!(out, "{:<22}{:>14.4}", "mean queue length", metrics.mean_queue_length)?;
    writeln!(out, "{:<22}{:>14}", "cap-hit slots", metrics.cap_hit_count)?;
    Ok(())
}

fn evaluate_cmd(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = scenario(&a.scenario, err)?;
    let policy = build_policy(&a.policy, &cfg, err)?;
    let start = Instant::now();
    let report = evaluate(&cfg, &*policy, a.runs, a.seed)?;
    if let Some(p) = &a.out {
        write_file(p, to_json(&report).as_bytes())?;
    }
    out.write_all(render_report(&report).as_bytes())?;
    writeln!(err, "wall-clock {:.2}s", start.elapsed().as_secs_f64())?;
    Ok(())
}

fn load_report(path: &Path) -> CliResult<EvalReport> {
    Ok(from_json(&read_file(path)?)?)
}

fn compare_cmd(a: CompareArgs, out: &mut dyn Write) -> CliResult<()> {
    let base = load_report(&a.base)?;
    let chal = load_report(&a.chal)?;
    if a.paired && base.per_run.seeds != chal.per_run.seeds {
        return Err(CliError::Validation(
            "--paired needs both reports to use the same seeds".into(),
        ));
    }
    let c: ComparisonReport = compare(&base, &chal)?;
    if let Some(p) = &a.out {
        write_file(p, to_json(&c).as_bytes())?;
    }
    out.write_all(render_comparison(&c).as_bytes())?;
    Ok(())
}

/// File names written by `plot-data`.
pub const HISTOGRAM_CSV: &str = "rate_histogram.csv";
pub const RATES_CSV: &str = "rates.csv";
pub const QUEUE_CSV: &str = "queue_lengths.csv";

fn plot_data(a: PlotArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_scenario(&a.scenario)?;
    std::fs::create_dir_all(&a.out)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rate", "queues"])?;
    let hist = rate_histogram(&cfg.arrival_rates);
    for (b, count) in hist.iter().enumerate() {
        w.write_record([format!("{:.2}", b as f64 / UNITS_PER_RATE as f64), count.to_string()])?;
    }
    write_file(&a.out.join(HISTOGRAM_CSV), &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["queue", "rate"])?;
    for (i, p) in cfg.arrival_rates.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    write_file(&a.out.join(RATES_CSV), &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;

    let hash = format!("{:016x}", cfg.hash());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "policy",
        "runs",
        "mean_queue_length",
        "mean_queue_length_ci",
        "discounted_cost",
        "discounted_cost_ci",
    ])?;
    for p in &a.reports {
        let r = load_report(p)?;
        if r.scenario_hash != hash {
            return Err(CliError::Validation(format!(
                "{} evaluates scenario `{}`, not `{}`",
                p.display(),
                r.scenario,
                cfg.name
            )));
        }
        w.write_record([
            r.policy.clone(),
            r.runs.to_string(),
            r.mean_queue_length.mean.to_string(),
            r.mean_queue_length.ci_half_width.to_string(),
            r.discounted_cost.mean.to_string(),
            r.discounted_cost.ci_half_width.to_string(),
        ])?;
    }
    write_file(&a.out.join(QUEUE_CSV), &w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;

    writeln!(out, "rate histogram for {} ({} queues)", cfg.name, cfg.num_queues)?;
    for (b, count) in hist.iter().enumerate().filter(|(_, c)| **c > 0) {
        writeln!(out, "{:>6.2} {:>4} {}", b as f64 / UNITS_PER_RATE as f64, count, "#".repeat(*count))?;
    }
    writeln!(out, "wrote {HISTOGRAM_CSV}, {RATES_CSV}, {QUEUE_CSV} to {}", a.out.display())?;
    Ok(())
}
