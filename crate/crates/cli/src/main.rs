//! `hfo`: generate, prepare, audit and evaluate HPC job traces.
//!
//! Exit codes: 0 success, 1 internal failure (including a failed leakage
//! check), 2 configuration error, 3 data error, 4 external service error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hfo_core::encoding::{register_embedder, Embedder, Encoding, EncodingError, HashEmbedder, HttpEmbedder};
use hfo_core::generator::{generate, DriftPoint, GeneratorConfig};
use hfo_core::harness::{
    run_offline, run_online, HarnessError, OfflineConfig, OnlineConfig, Pipeline, RunResult, WindowMembership,
};
use hfo_core::io::{read_trace, write_trace, TraceIoError};
use hfo_core::learners::{ClassifierSpec, Distance, LearnError, ModelKind};
use hfo_core::report::{render_table, EvalReport};
use hfo_core::trace::{audit_labels, monthly_distribution, relabel, JobRecord, OriginalState, Relabeled};

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }

    fn external(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<TraceIoError> for Failure {
    fn from(e: TraceIoError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<EncodingError> for Failure {
    fn from(e: EncodingError) -> Self {
        match e {
            EncodingError::EmbedderUnavailable(_) | EncodingError::Nondeterministic(_) => {
                Failure::external(e.to_string())
            }
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Learn(LearnError::InvalidSpec(_)) => Failure::config(e.to_string()),
            HarnessError::Encoding(inner) => inner.into(),
            HarnessError::Leakage(_) => Failure {
                code: 1,
                message: e.to_string(),
            },
            _ => Failure::data(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "hfo", version, about = "Submit-time failure prediction for HPC jobs")]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic trace and its `<out>.meta.json` bookkeeping.
    Generate(GenerateArgs),
    /// Relabel a trace by exit code and drop cancelled/node-fail jobs.
    Prepare(PrepareArgs),
    /// Report state/exit-code disagreements in a raw trace.
    Audit(AuditArgs),
    /// Evaluate one model/encoding on a prepared trace.
    Run(RunArgs),
    /// Merge report JSON files into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    months: u32,
    /// Target fraction of failed jobs, in (0, 1).
    #[arg(long, default_value_t = 0.11)]
    fail_rate: f64,
    #[arg(long, default_value_t = 60)]
    users: u32,
    #[arg(long, default_value_t = 200.0)]
    jobs_per_day: f64,
    #[arg(long, default_value_t = 5.0)]
    batch_size: f64,
    /// Spread of the monthly failure rate around the target.
    #[arg(long, default_value_t = 0.02)]
    jitter: f64,
    /// Failure-rule switches as `month:rule` pairs, e.g. `3:1,5:2`.
    #[arg(long, value_parser = parse_drift)]
    drift: Option<DriftList>,
    /// Fraction of records whose state disagrees with the exit code.
    #[arg(long, default_value_t = 0.07)]
    discrepancy_rate: f64,
    /// Fraction of outcomes not explained by the failure rule.
    #[arg(long, default_value_t = 0.3)]
    label_noise: f64,
    /// First day of the trace (YYYY-MM-DD, UTC).
    #[arg(long, default_value = "2020-05-01")]
    start: NaiveDate,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write completed/failed counts per month as CSV.
    #[arg(long)]
    monthly_csv: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Also write the audit as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Int,
    Sb,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Hash,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Offline,
    Online,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    #[arg(long, value_enum, default_value = "int")]
    encoding: EncodingArg,
    /// SB vectors from the built-in hash embedder or an HTTP service.
    #[arg(long, value_enum, default_value = "hash")]
    encoder: EncoderArg,
    #[arg(long, env = "HFO_ENCODER_URL")]
    encoder_url: Option<String>,
    #[arg(long, value_enum, default_value = "minkowski")]
    distance: DistanceArg,
    #[arg(long, default_value_t = 2)]
    p: u32,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value = "online")]
    setting: SettingArg,
    #[arg(long, default_value_t = 30)]
    alpha: u32,
    #[arg(long, default_value_t = 1)]
    omega: u32,
    #[arg(long, default_value_t = 0.7)]
    split: f64,
    #[arg(long, value_enum, default_value = "on")]
    knn_evict: Toggle,
    #[arg(long, value_enum, default_value = "submit")]
    window_membership: MembershipArg,
    /// Re-check every temporal constraint while running.
    #[arg(long)]
    verify: bool,
    /// Save the last fitted model as JSON.
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Cosine,
    Minkowski,
}

#[derive(Clone, Copy, ValueEnum)]
enum MembershipArg {
    Submit,
    End,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files written by `run`.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

#[derive(Clone)]
struct DriftList(Vec<DriftPoint>);

fn parse_drift(s: &str) -> Result<DriftList, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (m, r) = pair
                .split_once(':')
                .ok_or_else(|| format!("expected month:rule, got `{pair}`"))?;
            Ok(DriftPoint {
                month_index: m.trim().parse().map_err(|e| format!("month in `{pair}`: {e}"))?,
                rule_id: r.trim().parse().map_err(|e| format!("rule in `{pair}`: {e}"))?,
            })
        })
        .collect::<Result<_, String>>()
        .map(DriftList)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let start: DateTime<Utc> = a.start.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
    let config = GeneratorConfig {
        seed: a.seed,
        n_users: a.users,
        months: a.months,
        jobs_per_day_mean: a.jobs_per_day,
        batch_size_mean: a.batch_size,
        overall_fail_rate: a.fail_rate,
        monthly_fail_rate_jitter: a.jitter,
        drift_schedule: a.drift.map(|d| d.0).unwrap_or_default(),
        discrepancy_rate: a.discrepancy_rate,
        label_noise: a.label_noise,
        start,
        ..GeneratorConfig::default()
    };
    let trace = generate(&config).map_err(|e| Failure::config(e.to_string()))?;
    write_trace(&trace.jobs, &a.out)?;
    let mut meta = a.out.clone().into_os_string();
    meta.push(".meta.json");
    write_json(
        Path::new(&meta),
        &serde_json::json!({ "config": config, "stats": trace.stats }),
    )?;
    println!(
        "wrote {} jobs to {} (failed {:.1}% of labeled, {} unfinished)",
        trace.stats.jobs,
        a.out.display(),
        100.0 * trace.stats.realized_fail_rate(),
        trace.stats.unfinished
    );
    Ok(())
}

fn cmd_prepare(a: PrepareArgs) -> CliResult {
    let raw = read_trace(&a.input)?;
    let mut out: Vec<JobRecord> = Vec::with_capacity(raw.len());
    let mut labeled = Vec::new();
    let (mut cancelled, mut node_fail, mut unfinished) = (0usize, 0usize, 0usize);
    for record in raw {
        if !record.is_finished() {
            unfinished += 1;
            out.push(record);
            continue;
        }
        match relabel(record).map_err(|e| Failure::data(e.to_string()))? {
            Relabeled::Excluded(OriginalState::Cancelled) => cancelled += 1,
            Relabeled::Excluded(_) => node_fail += 1,
            Relabeled::Labeled(job) => {
                let mut r = job.record.clone();
                r.original_state = Some(if job.outcome.is_failed() {
                    OriginalState::Failed
                } else {
                    OriginalState::Completed
                });
                out.push(r);
                labeled.push(job);
            }
        }
    }
    write_trace(&out, &a.out)?;
    let failed = labeled.iter().filter(|j| j.outcome.is_failed()).count();
    println!("excluded cancelled: {cancelled}");
    println!("excluded node-fail: {node_fail}");
    println!("kept unfinished:    {unfinished}");
    println!("labeled completed:  {}", labeled.len() - failed);
    println!("labeled failed:     {failed}");
    if let Some(path) = a.monthly_csv {
        let mut text = String::from("month,completed,failed\n");
        for m in monthly_distribution(&labeled) {
            text.push_str(&format!("{},{},{}\n", m.month, m.completed, m.failed));
        }
        fs::write(&path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_audit(a: AuditArgs) -> CliResult {
    let trace = read_trace(&a.input)?;
    let report = audit_labels(&trace).map_err(|e| Failure::data(e.to_string()))?;
    println!("{:<12} {:>9} {:>8} {:>9} {:>9}", "State", "Count", "%", "EC=0", "EC!=0");
    for (state, row) in &report.by_state {
        println!(
            "{:<12} {:>9} {:>8.2} {:>9} {:>9}",
            state.as_str(),
            row.count,
            row.percent,
            row.exit_zero,
            row.exit_nonzero
        );
    }
    println!("finished records:              {}", report.total);
    println!("unfinished (skipped):          {}", report.unfinished);
    println!("not completed with EC 0:       {}", report.not_completed_exit_zero);
    println!("completed with non-zero EC:    {}", report.completed_exit_nonzero);
    if report.missing_state > 0 {
        println!("missing state:                 {}", report.missing_state);
    }
    if let Some(path) = a.out {
        write_json(&path, &report)?;
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> CliResult {
    let spec = ClassifierSpec {
        k: a.k,
        distance: match a.distance {
            DistanceArg::Cosine => Distance::Cosine,
            DistanceArg::Minkowski => Distance::Minkowski,
        },
        p: a.p,
        seed: a.seed,
        ..ClassifierSpec::new(a.model)
    };
    spec.validate().map_err(|e| Failure::config(e.to_string()))?;
    let encoding = match a.encoding {
        EncodingArg::Int => Encoding::Int,
        EncodingArg::Sb => Encoding::Sb,
    };
    let external;
    let embedder: &dyn Embedder = match (a.encoding, a.encoder) {
        (EncodingArg::Sb, EncoderArg::External) => {
            let url = a
                .encoder_url
                .as_deref()
                .ok_or_else(|| Failure::config("--encoder external needs --encoder-url or HFO_ENCODER_URL"))?;
            external = register_embedder(HttpEmbedder::connect(url)?)?;
            &external
        }
        _ => &HashEmbedder,
    };
    let trace = read_trace(&a.input)?;
    let pipeline = Pipeline::new(&spec, encoding).with_embedder(embedder);
    let result: RunResult = match a.setting {
        SettingArg::Offline => run_offline(
            &trace,
            pipeline,
            &OfflineConfig {
                split_fraction: a.split,
                verify: a.verify,
            },
        )?,
        SettingArg::Online => run_online(
            &trace,
            pipeline,
            &OnlineConfig {
                alpha_days: a.alpha,
                omega_days: a.omega,
                knn_evict: matches!(a.knn_evict, Toggle::On),
                membership: match a.window_membership {
                    MembershipArg::Submit => WindowMembership::Submit,
                    MembershipArg::End => WindowMembership::End,
                },
                verify: a.verify,
                fault: None,
            },
        )?,
    };
    for w in &result.report.warnings {
        log::warn!("{w}");
    }
    print!("{}", render_table(std::slice::from_ref(&result.report)));
    if let Some(path) = &a.out {
        write_json(path, &result.report)?;
    }
    if let Some(path) = &a.save_model {
        let model = result
            .final_model
            .as_ref()
            .ok_or_else(|| Failure::data("no model was fitted"))?;
        let text = model.to_json().map_err(|e| Failure::data(e.to_string()))?;
        fs::write(path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let mut reports = Vec::with_capacity(a.files.len());
    for path in &a.files {
        let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        reports.push(report);
    }
    print!("{}", render_table(&reports));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Prepare(a) => cmd_prepare(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
