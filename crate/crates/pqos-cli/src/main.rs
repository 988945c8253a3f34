//! `pqos` — leader/follower V2X throughput-prediction workbench.
//!
//! Chains the pipeline synth → ingest → analyze → align → build → train →
//! evaluate → report over file-based stage handoffs, so every intermediate
//! artifact is inspectable and partial reruns are cheap. Exit status 0 on
//! success, 1 for a failing stage, 2 for configuration errors; failures also
//! emit a machine-readable JSON record on stderr. `PQOS_LOG` controls log
//! verbosity.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use pqos_core::featureset::{DatasetKind, ScaleFit};
use pqos_core::models::ModelKind;
use stages::CliError;

#[derive(Parser)]
#[command(name = "pqos", version, about = "V2X throughput-prediction workbench")]
struct Cli {
    /// Pipeline config file (JSON, // and /* */ comments allowed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory for stage artifacts.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Output directory for the final report.
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Base seed for generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for run-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Scaler fit rows: `full` or `train`.
    #[arg(long, global = true)]
    scale_fit: Option<String>,
    /// Restrict to these datasets (egf|eglt|eglt-diff|egls|egls-ratio).
    #[arg(long = "dataset", global = true)]
    datasets: Vec<String>,
    /// Restrict to these model families (gbt|conv|recurrent).
    #[arg(long = "model", global = true)]
    models: Vec<String>,
    /// Number of seeded runs per grid cell.
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic convoy scenario.
    Synth,
    /// Load and filter the trace file into the canonical form.
    Ingest,
    /// Correlation analyses (ACF, cross-correlation, pairwise matrix).
    Analyze,
    /// Temporal and spatial ego/lead alignment artifacts.
    Align,
    /// Build, scale and split the feature datasets.
    Build,
    /// Train one model per (dataset, family) at the base seed.
    Train,
    /// Run the multi-run experiment grid.
    Evaluate,
    /// Render metrics.csv, report.json and plots.
    Report,
    /// All stages in order.
    Pipeline,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(CliError::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(workdir) = &cli.workdir {
        cfg.workdir = workdir.clone();
    }
    if let Some(outdir) = &cli.outdir {
        cfg.outdir = outdir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = Some(jobs);
    }
    if let Some(fit) = &cli.scale_fit {
        cfg.scale_fit = match fit.to_ascii_lowercase().as_str() {
            "full" => ScaleFit::Full,
            "train" => ScaleFit::Train,
            other => {
                return Err(CliError::Config(format!(
                    "unknown scale-fit '{other}' (expected full|train)"
                )))
            }
        };
    }
    if !cli.datasets.is_empty() {
        cfg.datasets = cli
            .datasets
            .iter()
            .map(|s| {
                DatasetKind::parse(s)
                    .ok_or_else(|| CliError::Config(format!("unknown dataset '{s}'")))
            })
            .collect::<Result<_, _>>()?;
    }
    if !cli.models.is_empty() {
        cfg.models = cli
            .models
            .iter()
            .map(|s| {
                ModelKind::parse(s).ok_or_else(|| CliError::Config(format!("unknown model '{s}'")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(runs) = cli.runs {
        if runs == 0 {
            return Err(CliError::Config("--runs must be >= 1".into()));
        }
        cfg.n_runs = runs;
    }
    if cfg.datasets.is_empty() || cfg.models.is_empty() {
        return Err(CliError::Config(
            "config needs at least one dataset and one model".into(),
        ));
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if let Some(jobs) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set --jobs: {e}")))?;
    }
    match cli.command {
        Command::Synth => stages::stage_synth(&cfg),
        Command::Ingest => stages::stage_ingest(&cfg),
        Command::Analyze => stages::stage_analyze(&cfg),
        Command::Align => stages::stage_align(&cfg),
        Command::Build => stages::stage_build(&cfg),
        Command::Train => stages::stage_train(&cfg),
        Command::Evaluate => stages::stage_evaluate(&cfg),
        Command::Report => stages::stage_report(&cfg),
        Command::Pipeline => stages::stage_pipeline(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PQOS_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": "config", "message": message})
            );
            ExitCode::from(2)
        }
        Err(CliError::Stage { stage, message }) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": "stage_failure", "stage": stage, "message": message})
            );
            ExitCode::from(1)
        }
    }
}
