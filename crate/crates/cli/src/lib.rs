//! Command-line driver: `run`, `regularize`, `rerank` and `inspect`.
//!
//! Errors print as `error[<category>]: <message>` and map to a stable exit
//! code per category (see [`CliError::exit_code`]).

pub mod config;
pub mod table;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use refocus_core::backends::sim::{SimConfig, SimSuite};
use refocus_core::backends::{BackendEndpoint, Backends};
use refocus_core::engine::{
    run_pipeline, CandidateRecord, EngineError, ManifestError, RunManifest, MANIFEST_FILE,
};
use refocus_core::layout::{parse_layout_response, regularize_layout, DEFAULT_DELTA};
use refocus_core::scoring::{hybrid_score, rerank_top_k};
use refocus_core::{LayoutError, PipelineConfig};
use thiserror::Error;

pub use config::{resolve, ConfigPatch};
pub use table::{TableError, TableRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Layout(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Manifest(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// Machine-readable category printed in the error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Layout(_) => "layout",
            CliError::Backend(_) => "backend",
            CliError::Manifest(_) => "manifest",
            CliError::Io(_) => "io",
            CliError::Internal(_) => "internal",
        }
    }

    /// Exit code; 2 is left to argument-parsing errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 3,
            CliError::Layout(_) => 4,
            CliError::Backend(_) => 5,
            CliError::Manifest(_) => 6,
            CliError::Io(_) => 7,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::Config(_) => CliError::Config(message),
            EngineError::LayoutPhaseFailed { .. } => CliError::Layout(message),
            EngineError::AllGenerationFailed { .. } => CliError::Backend(message),
            EngineError::Io(_) => CliError::Io(message),
            EngineError::Scoring(_) | EngineError::EmptyKeptSet | EngineError::EmptyRun => {
                CliError::Internal(message)
            }
        }
    }
}

impl From<LayoutError> for CliError {
    fn from(e: LayoutError) -> Self {
        match e {
            LayoutError::InvalidDelta(_) => CliError::Config(e.to_string()),
            _ => CliError::Layout(e.to_string()),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Manifest(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "refocus", version, about = "Layout-grounded image generation with re-ranking and refinement")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Run the full pipeline for one prompt.
    Run(RunArgs),
    /// Parse a layout document and print its regularized form.
    Regularize(RegularizeArgs),
    /// Re-rank a finished run under a different scene weight.
    Rerank(RerankArgs),
    /// Print a run's candidate and score table.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Sim,
    Http,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub prompt: String,
    /// TOML or JSON file with pipeline config fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendKind::Sim)]
    pub backend: BackendKind,
    /// Base URL used for every role without its own URL.
    #[arg(long)]
    pub endpoint_url: Option<String>,
    #[arg(long)]
    pub layout_url: Option<String>,
    #[arg(long)]
    pub generator_url: Option<String>,
    #[arg(long)]
    pub refiner_url: Option<String>,
    #[arg(long)]
    pub embedder_url: Option<String>,
    /// Per-request HTTP timeout in seconds.
    #[arg(long, default_value_t = 120.0)]
    pub timeout: f64,
    #[arg(long, default_value = "refocus-run")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = SimConfig::default().placement_noise)]
    pub sim_placement_noise: f64,
    #[arg(long, default_value_t = SimConfig::default().dropout)]
    pub sim_dropout: f64,
    #[command(flatten)]
    pub overrides: ConfigPatch,
}

#[derive(Debug, Args)]
pub struct RegularizeArgs {
    /// Layout document; prose around the JSON object is tolerated.
    #[arg(long)]
    pub layout: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value = "")]
    pub prompt: String,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// Manifest file or run directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Scene weight; defaults to the one the run used.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Print only the best K.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Manifest file or run directory.
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args, out).map(|_| ()),
        Command::Regularize(args) => cmd_regularize(&args, out),
        Command::Rerank(args) => cmd_rerank(&args, out),
        Command::Inspect(args) => cmd_inspect(&args, out),
    }
}

/// Defaults, then the config file, then flags; samples a seed if none is
/// given.
pub fn effective_config(args: &RunArgs) -> Result<PipelineConfig, CliError> {
    let file = args.config.as_deref().map(ConfigPatch::load).transpose()?;
    let (mut config, seeded) = resolve(file.as_ref(), &args.overrides);
    if !seeded {
        config.base_seed = rand::random();
        log::info!("no seed given, sampled {}", config.base_seed);
    }
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

pub fn build_backends(args: &RunArgs, config: &PipelineConfig) -> Result<Backends, CliError> {
    match args.backend {
        BackendKind::Sim => {
            if !(args.sim_placement_noise.is_finite() && args.sim_placement_noise >= 0.0) {
                return Err(CliError::Config(format!(
                    "--sim-placement-noise {} must be a finite non-negative number",
                    args.sim_placement_noise
                )));
            }
            if !(0.0..=1.0).contains(&args.sim_dropout) {
                return Err(CliError::Config(format!(
                    "--sim-dropout {} outside [0, 1]",
                    args.sim_dropout
                )));
            }
            let suite = SimSuite::new(SimConfig {
                placement_noise: args.sim_placement_noise,
                dropout: args.sim_dropout,
            });
            Ok(suite.backends())
        }
        BackendKind::Http => {
            if !(args.timeout.is_finite() && args.timeout > 0.0) {
                return Err(CliError::Config(format!("--timeout {} must be positive", args.timeout)));
            }
            let endpoint = |role: &str, url: &Option<String>| {
                let base = url.as_ref().or(args.endpoint_url.as_ref()).ok_or_else(|| {
                    CliError::Config(format!("http backend needs --{role}-url or --endpoint-url"))
                })?;
                Ok::<_, CliError>(
                    BackendEndpoint::new(base.clone())
                        .with_timeout(Duration::from_secs_f64(args.timeout))
                        .with_retry_budget(config.retry_budget)
                        .with_env_token(),
                )
            };
            Ok(Backends::http(
                endpoint("layout", &args.layout_url)?,
                endpoint("generator", &args.generator_url)?,
                endpoint("refiner", &args.refiner_url)?,
                endpoint("embedder", &args.embedder_url)?,
            ))
        }
    }
}

/// Run the pipeline, persist it under `--out-dir` and print a summary.
/// Returns the manifest path.
pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<PathBuf, CliError> {
    if args.prompt.trim().is_empty() {
        return Err(CliError::Config("--prompt must not be empty".into()));
    }
    let config = effective_config(args)?;
    let backends = build_backends(args, &config)?;
    let run = run_pipeline(&args.prompt, &config, &backends)?;
    run.persist(&args.out_dir)?;
    let manifest_path = args.out_dir.join(MANIFEST_FILE);
    let m = &run.manifest;
    let fin = m
        .candidate(&m.final_candidate_id)
        .ok_or_else(|| CliError::Internal("final candidate missing from manifest".into()))?;
    writeln!(out, "seed: {}", m.config.base_seed)?;
    writeln!(out, "manifest: {}", manifest_path.display())?;
    writeln!(
        out,
        "final: {} (combined {:.4})",
        args.out_dir.join(&fin.image_path).display(),
        fin.score.combined
    )?;
    if !m.failures.is_empty() {
        writeln!(out, "skipped: {} backend failure(s), see manifest", m.failures.len())?;
    }
    let rows: Vec<TableRow> = m.candidates.iter().map(TableRow::from).collect();
    out.write_all(table::render(&rows).as_bytes())?;
    Ok(manifest_path)
}

pub fn cmd_regularize(args: &RegularizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let raw = fs::read_to_string(&args.layout)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", args.layout.display())))?;
    let layout = parse_layout_response(&raw, &args.prompt)?;
    let regular = regularize_layout(&layout, args.delta)?;
    writeln!(out, "{}", regular.to_json())?;
    Ok(())
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Recombine every stored score under `lambda` and order by preference.
/// Uses only cached scene/object scores.
pub fn rerank_records(manifest: &RunManifest, lambda: f64) -> Result<Vec<CandidateRecord>, CliError> {
    let records = manifest
        .candidates
        .iter()
        .map(|c| {
            let score = hybrid_score(c.score.scene, c.score.object, lambda)
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(CandidateRecord { score, ..c.clone() })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rerank_top_k(&records, records.len().max(1)).map_err(|e| CliError::Manifest(e.to_string()))
}

pub fn cmd_rerank(args: &RerankArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = RunManifest::load(&manifest_path(&args.manifest))?;
    let lambda = args.lambda.unwrap_or(manifest.config.lambda);
    let mut ranked = rerank_records(&manifest, lambda)?;
    if let Some(k) = args.top_k {
        if k == 0 {
            return Err(CliError::Config("--top-k must be at least 1".into()));
        }
        ranked.truncate(k);
    }
    writeln!(out, "# lambda: {lambda}")?;
    let rows: Vec<TableRow> = ranked.iter().map(TableRow::from).collect();
    out.write_all(table::render(&rows).as_bytes())?;
    Ok(())
}

/// The inspect view of a manifest: comment lines, then the table.
pub fn inspect_text(manifest: &RunManifest) -> String {
    let rows: Vec<TableRow> = manifest.candidates.iter().map(TableRow::from).collect();
    format!(
        "# prompt: {:?}\n# final: {}\n{}",
        manifest.prompt,
        manifest.final_candidate_id,
        table::render(&rows)
    )
}

/// Parse the table printed by `inspect` or `rerank`.
pub fn parse_inspect_table(text: &str) -> Result<Vec<TableRow>, TableError> {
    table::parse(text)
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = RunManifest::load(&manifest_path(&args.manifest))?;
    out.write_all(inspect_text(&manifest).as_bytes())?;
    Ok(())
}
