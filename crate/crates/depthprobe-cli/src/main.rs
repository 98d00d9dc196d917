//! Command-line entry points: run, simulate, sweep, report, agreement,
//! resume. Exit codes: 0 success, 1 run failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use depthprobe::domain::DepthConfig;
use depthprobe::facts::retrieval::{HttpRetrievalBackend, RetrievalSource};
use depthprobe::facts::wiki::{WikiClient, WikiSource};
use depthprobe::facts::SourceRegistry;
use depthprobe::llm::{HttpChatProvider, LlmClient, PriceTable, RetryPolicy, UsageRole};
use depthprobe::orchestrator::{resume as resume_run, run_evaluation, RunServices};
use depthprobe::report::{
    agreement_report, parse_verdict_csv, render, render_agreement_markdown, report_from_events,
    ReportFormat, RunReport,
};
use depthprobe::runlog::{read_log, EventBody, JsonlSink, RunLogEvent};
use depthprobe::services::{LlmEvaluator, LlmTarget};
use depthprobe::settings::RunSettings;
use depthprobe::simulation::{
    ablation_sweep, services_from_annotations, synthetic_services_with_gap, AccuracyProfile,
    SimMode, SweepGrid,
};
use depthprobe::transport::{LiveTransport, RecordingTransport, ReplayTransport, Transport};

#[derive(Parser)]
#[command(
    name = "depthprobe",
    about = "Measures how deeply a language model stays correct under adaptive follow-up questioning",
    version
)]
struct Cli {
    /// Seed override for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Settings file (JSON or TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path for the report (format from extension: .json/.md/.csv).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding request/response cassettes.
    #[arg(long, global = true)]
    cassette_dir: Option<PathBuf>,
    /// Record live traffic into the cassette directory.
    #[arg(long, global = true, conflicts_with = "replay")]
    record: bool,
    /// Replay entirely from cassettes; no network.
    #[arg(long, global = true)]
    replay: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a live model over live fact sources.
    Run(RunArgs),
    /// Evaluate a synthetic model offline.
    Simulate(SimulateArgs),
    /// Sweep N, Q, and the survival threshold over simulated runs.
    Sweep(SweepArgs),
    /// Recompute a report from a run log.
    Report(ReportArgs),
    /// Inter-evaluator agreement from verdict files.
    Agreement(AgreementArgs),
    /// Continue an interrupted run from its log.
    Resume(ResumeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Topic to drill into.
    #[arg(long)]
    topic: Option<String>,
    /// Model under evaluation.
    #[arg(long)]
    target_model: Option<String>,
    /// Model that generates questions and scores answers.
    #[arg(long)]
    evaluator_model: Option<String>,
    /// Chat-completions endpoint (one endpoint, two models).
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    chat_endpoint: String,
    /// Environment variable holding the target credential.
    #[arg(long, default_value = "DEPTHPROBE_TARGET_API_KEY")]
    target_api_key_env: String,
    /// Environment variable holding the evaluator credential.
    #[arg(long, default_value = "DEPTHPROBE_EVALUATOR_API_KEY")]
    evaluator_api_key_env: String,
    /// Encyclopedia REST base URL.
    #[arg(long, default_value = "https://en.wikipedia.org/api/rest_v1")]
    wiki_host: String,
    /// Citation-backed search endpoint for PROFESSIONAL+ tiers.
    #[arg(long)]
    retrieval_endpoint: Option<String>,
    /// Environment variable holding the retrieval credential.
    #[arg(long, default_value = "DEPTHPROBE_RETRIEVAL_API_KEY")]
    retrieval_api_key_env: String,
    /// Price table (JSON: model -> per-million-token prices).
    #[arg(long)]
    price_table: Option<PathBuf>,
    /// Event log path.
    #[arg(long, default_value = "depthprobe-run.jsonl")]
    log: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Bernoulli,
}

#[derive(Args)]
struct SimulateArgs {
    /// Accuracy profile: default | perfect | zero | path to a JSON profile.
    #[arg(long, default_value = "default")]
    profile: String,
    /// Outcome mode for the synthetic target.
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Fraction of drilling directions with no verifiable fact.
    #[arg(long, default_value_t = 0.0)]
    gap_rate: f64,
    #[arg(long)]
    topic: Option<String>,
    /// Questions per depth (N).
    #[arg(long)]
    n: Option<u32>,
    /// Passes per tier (Q).
    #[arg(long)]
    q: Option<u32>,
    /// Survival threshold.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    max_depth: Option<u32>,
    /// Event log path.
    #[arg(long, default_value = "depthprobe-sim.jsonl")]
    log: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated questions-per-depth values.
    #[arg(long, default_value = "30", value_delimiter = ',')]
    n_values: Vec<u32>,
    /// Comma-separated passes-per-tier values.
    #[arg(long, default_value = "1,3,5", value_delimiter = ',')]
    q_values: Vec<u32>,
    /// Comma-separated survival thresholds.
    #[arg(long, default_value = "0.1,0.2,0.3", value_delimiter = ',')]
    theta_values: Vec<f64>,
    #[arg(long, default_value = "default")]
    profile: String,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    replications: u32,
    #[arg(long, default_value_t = 25)]
    max_depth: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Run log to recompute from.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    #[arg(long)]
    price_table: Option<PathBuf>,
}

#[derive(Args)]
struct AgreementArgs {
    /// Two or more verdict CSV files (question_id,verdict).
    #[arg(required = true, num_args = 2..)]
    files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

#[derive(Args)]
struct ResumeArgs {
    /// Run log to continue.
    #[arg(long)]
    log: PathBuf,
    /// Where the completed log is written (defaults to the input path).
    #[arg(long)]
    out_log: Option<PathBuf>,
    #[arg(long)]
    price_table: Option<PathBuf>,
    // Live-service flags mirror `run` for non-simulated logs.
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    chat_endpoint: String,
    #[arg(long, default_value = "DEPTHPROBE_TARGET_API_KEY")]
    target_api_key_env: String,
    #[arg(long, default_value = "DEPTHPROBE_EVALUATOR_API_KEY")]
    evaluator_api_key_env: String,
    #[arg(long, default_value = "https://en.wikipedia.org/api/rest_v1")]
    wiki_host: String,
    #[arg(long)]
    retrieval_endpoint: Option<String>,
    #[arg(long, default_value = "DEPTHPROBE_RETRIEVAL_API_KEY")]
    retrieval_api_key_env: String,
}

/// Argument-consistency problems exit 2, like clap's own parse errors; run
/// failures exit 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {err}");
            eprintln!("run `depthprobe --help` for the full synopsis");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(&cli, args),
        Command::Simulate(args) => cmd_simulate(&cli, args),
        Command::Sweep(args) => cmd_sweep(&cli, args),
        Command::Report(args) => cmd_report(&cli, args),
        Command::Agreement(args) => cmd_agreement(&cli, args),
        Command::Resume(args) => cmd_resume(&cli, args),
    }
}

fn load_settings(cli: &Cli) -> Result<RunSettings> {
    match &cli.config {
        Some(path) => RunSettings::load(path)
            .with_context(|| format!("loading settings from {}", path.display())),
        None => Ok(RunSettings::default()),
    }
}

fn parse_profile(name: &str, mode: ModeArg) -> Result<AccuracyProfile> {
    let mode = match mode {
        ModeArg::Exact => SimMode::ExactFraction,
        ModeArg::Bernoulli => SimMode::Bernoulli,
    };
    match name {
        "default" | "graded" => Ok(AccuracyProfile::graded(mode)),
        "perfect" => Ok(AccuracyProfile::uniform(1.0, mode).expect("valid")),
        "zero" => Ok(AccuracyProfile::uniform(0.0, mode).expect("valid")),
        path => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading profile {path}"))?;
            let mut profile: AccuracyProfile =
                serde_json::from_str(&text).context("parsing profile JSON")?;
            profile.mode = mode;
            Ok(profile)
        }
    }
}

fn load_prices(path: &Option<PathBuf>) -> Result<Option<PriceTable>> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading price table {}", path.display()))?;
            Ok(Some(PriceTable::from_json(&text)?))
        }
        None => Ok(None),
    }
}

fn build_transport(cli: &Cli) -> Result<Arc<dyn Transport>> {
    if cli.replay {
        let dir = cli
            .cassette_dir
            .as_ref()
            .ok_or_else(|| usage_error("--replay requires --cassette-dir"))?;
        return Ok(Arc::new(ReplayTransport::from_dir(dir)?));
    }
    let live = LiveTransport::new(4.0, Duration::from_secs(30));
    if cli.record {
        let dir = cli
            .cassette_dir
            .as_ref()
            .ok_or_else(|| usage_error("--record requires --cassette-dir"))?;
        return Ok(Arc::new(RecordingTransport::new(Box::new(live), dir)));
    }
    Ok(Arc::new(live))
}

fn write_report(cli: &Cli, report: &RunReport) -> Result<()> {
    match &cli.out {
        Some(path) => {
            let format = match path.extension().and_then(|e| e.to_str()) {
                Some("md") | Some("markdown") => ReportFormat::Markdown,
                Some("csv") => ReportFormat::Csv,
                _ => ReportFormat::Json,
            };
            std::fs::write(path, render(report, format))
                .with_context(|| format!("writing report to {}", path.display()))?;
            eprintln!("report written to {}", path.display());
        }
        None => print!("{}", render(report, ReportFormat::Markdown)),
    }
    Ok(())
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let overrides = RunSettings {
        topic: args.topic.clone(),
        target_model: args.target_model.clone(),
        evaluator_model: args.evaluator_model.clone(),
        ..RunSettings::default()
    };
    let merged = load_settings(cli)?.overridden_by(&overrides);
    let mut config = merged.to_config();
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let target_model = merged
        .target_model
        .clone()
        .ok_or_else(|| usage_error("--target-model (or target_model in --config) is required"))?;
    let evaluator_model = merged.evaluator_model.clone().ok_or_else(|| {
        usage_error("--evaluator-model (or evaluator_model in --config) is required")
    })?;

    let transport = build_transport(cli)?;
    let mut services = live_services(
        transport,
        &target_model,
        &evaluator_model,
        &args.chat_endpoint,
        &args.target_api_key_env,
        &args.evaluator_api_key_env,
        &args.wiki_host,
        args.retrieval_endpoint.as_deref(),
        &args.retrieval_api_key_env,
    );
    services.options.prices = load_prices(&args.price_table)?;

    let mut sink = JsonlSink::create(&args.log)?;
    let report = run_evaluation(&config, &services, &mut sink)?;
    eprintln!("run log written to {}", args.log.display());
    write_report(cli, &report)
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let overrides = RunSettings {
        topic: args.topic.clone(),
        questions_per_depth: args.n,
        passes_per_tier: args.q,
        survival_threshold: args.theta,
        max_depth: args.max_depth,
        ..RunSettings::default()
    };
    let mut settings = load_settings(cli)?.overridden_by(&overrides);
    if let Some(seed) = cli.seed {
        settings.seed = Some(seed);
    }
    let mut config: DepthConfig = settings.to_config();
    if config.topic.is_empty() {
        config.topic = "synthetic-topic".to_string();
    }
    let profile = parse_profile(&args.profile, args.mode)?;
    let services = synthetic_services_with_gap(&profile, &config, args.gap_rate);
    let mut sink = JsonlSink::create(&args.log)?;
    let report = run_evaluation(&config, &services, &mut sink)?;
    eprintln!("run log written to {}", args.log.display());
    write_report(cli, &report)
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let profile = parse_profile(&args.profile, args.mode)?;
    let grid = SweepGrid {
        n_values: args.n_values.clone(),
        q_values: args.q_values.clone(),
        theta_values: args.theta_values.clone(),
        profile,
        replications: args.replications,
        seed: cli.seed.unwrap_or(42),
        max_depth: args.max_depth,
        topic: "synthetic-topic".to_string(),
    };
    let result = ablation_sweep(&grid)?;
    let csv = result.to_csv();
    match &cli.out {
        Some(path) => {
            std::fs::write(path, csv)
                .with_context(|| format!("writing sweep CSV to {}", path.display()))?;
            eprintln!("sweep written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    for cell in &result.cells {
        eprintln!(
            "n={} q={} theta={}: mean EVD {:.2}, mean max depth {:.1}, CI width {:.3}",
            cell.n, cell.q, cell.theta, cell.mean_evd, cell.mean_max_depth, cell.ci_width
        );
    }
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let events = read_log(&args.log)?;
    depthprobe::runlog::validate_log(&events)?;
    let prices = load_prices(&args.price_table)?;
    let report = report_from_events(&events, prices.as_ref())?;
    let format = match args.format {
        FormatArg::Markdown => ReportFormat::Markdown,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let rendered = render(&report, format);
    match &cli.out {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("writing report to {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_agreement(cli: &Cli, args: &AgreementArgs) -> Result<()> {
    let mut raters = Vec::new();
    for path in &args.files {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("rater")
            .to_string();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading verdict file {}", path.display()))?;
        raters.push(parse_verdict_csv(&name, &text)?);
    }
    let report = agreement_report(&raters)?;
    let rendered = match args.format {
        FormatArg::Json => serde_json::to_string_pretty(&report)? + "\n",
        _ => render_agreement_markdown(&report),
    };
    match &cli.out {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("writing agreement report to {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_resume(cli: &Cli, args: &ResumeArgs) -> Result<()> {
    let events = read_log(&args.log)?;
    depthprobe::runlog::validate_log(&events)?;
    let (config, annotations) = match &events[0].body {
        EventBody::Config(payload) => (payload.config.clone(), payload.annotations.clone()),
        _ => bail!("log does not start with a CONFIG event"),
    };

    let mut services = match services_from_annotations(&annotations, &config) {
        Some(simulated) => simulated,
        None => live_services_from_log(cli, args, &events)?,
    };
    services.options.prices = load_prices(&args.price_table)?;

    let out_log = args.out_log.clone().unwrap_or_else(|| args.log.clone());
    // Write to a scratch path first so the input log survives a failed resume.
    let scratch = out_log.with_extension("resume-tmp");
    let report = {
        let mut sink = JsonlSink::create(&scratch)?;
        resume_run(events, &services, &mut sink)?
    };
    std::fs::rename(&scratch, &out_log)
        .with_context(|| format!("moving completed log to {}", out_log.display()))?;
    eprintln!("completed log written to {}", out_log.display());
    write_report(cli, &report)
}

#[allow(clippy::too_many_arguments)]
fn live_services(
    transport: Arc<dyn Transport>,
    target_model: &str,
    evaluator_model: &str,
    chat_endpoint: &str,
    target_api_key_env: &str,
    evaluator_api_key_env: &str,
    wiki_host: &str,
    retrieval_endpoint: Option<&str>,
    retrieval_api_key_env: &str,
) -> RunServices {
    let mut registry = SourceRegistry::new();
    registry.register(Arc::new(WikiSource::new(WikiClient::new(
        transport.clone(),
        wiki_host,
    ))));
    if let Some(endpoint) = retrieval_endpoint {
        registry.register(Arc::new(RetrievalSource::new(Arc::new(
            HttpRetrievalBackend::new(
                transport.clone(),
                endpoint,
                std::env::var(retrieval_api_key_env).ok(),
            ),
        ))));
    }
    let target = LlmTarget::new(LlmClient::new(
        Box::new(HttpChatProvider::from_env(
            transport.clone(),
            chat_endpoint,
            target_api_key_env,
        )),
        target_model,
        UsageRole::Target,
        RetryPolicy::default(),
    ));
    let evaluator = LlmEvaluator::new(LlmClient::new(
        Box::new(HttpChatProvider::from_env(
            transport,
            chat_endpoint,
            evaluator_api_key_env,
        )),
        evaluator_model,
        UsageRole::Evaluator,
        RetryPolicy::default(),
    ));
    RunServices {
        target: Arc::new(target),
        evaluator: Arc::new(evaluator),
        facts: registry,
        options: Default::default(),
    }
}

fn live_services_from_log(
    cli: &Cli,
    args: &ResumeArgs,
    events: &[RunLogEvent],
) -> Result<RunServices> {
    let (target_model, evaluator_model) = match &events[0].body {
        EventBody::Config(payload) => (
            payload.target_model.clone(),
            payload.evaluator_model.clone(),
        ),
        _ => bail!("log does not start with a CONFIG event"),
    };
    Ok(live_services(
        build_transport(cli)?,
        &target_model,
        &evaluator_model,
        &args.chat_endpoint,
        &args.target_api_key_env,
        &args.evaluator_api_key_env,
        &args.wiki_host,
        args.retrieval_endpoint.as_deref(),
        &args.retrieval_api_key_env,
    ))
}
