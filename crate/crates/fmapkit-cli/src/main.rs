//! Batch driver for the shape-correspondence pipeline.
//!
//! Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cache;
mod commands;
mod config;
mod manifest;

use config::PipelineConfig;
use manifest::DatasetManifest;

/// CLI-level error with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { code: 2, message }
    }

    pub fn computational(message: String) -> Self {
        CliError { code: 1, message }
    }
}

impl From<fmapkit::Error> for CliError {
    fn from(e: fmapkit::Error) -> Self {
        let code = match &e {
            fmapkit::Error::Parse { .. } | fmapkit::Error::Format { .. } | fmapkit::Error::Io(_) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "fmapkit", version, about = "Spectral shape-correspondence pipeline")]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Override the spectral width.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Override the regularization weight.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Override the RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or refresh the spectral caches for every shape in the manifest.
    Precompute,
    /// Match one pair: descriptors, functional map, point map.
    Match {
        /// Pair key `source:target`.
        #[arg(long)]
        pair: String,
        /// Checkpoint for learned descriptors.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the feature extractor on the manifest's pairs.
    Train {
        /// Optimizer steps to run.
        #[arg(long)]
        steps: u64,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Refine a map file with spectral ICP or ZoomOut.
    Refine {
        /// Pair key `source:target`.
        #[arg(long)]
        pair: String,
        /// Input map: an FMAP or P2P file.
        #[arg(long)]
        input: PathBuf,
        /// `icp` or `zoomout`.
        #[arg(long)]
        method: String,
        /// ICP iteration override.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a predicted correspondence against ground truth.
    Eval {
        /// Predicted P2P file.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth P2P file.
        #[arg(long)]
        gt: PathBuf,
        /// Codomain mesh (the shapes both maps point into).
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Export learned descriptor channels and their spectral reconstructions.
    ExportDesc {
        /// Shape id from the manifest.
        #[arg(long)]
        shape: String,
        /// Checkpoint with trained weights.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated channel indices.
        #[arg(long, default_value = "0")]
        channels: String,
    },
}

fn load_manifest(cli: &Cli) -> Result<DatasetManifest, CliError> {
    let path = cli
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::usage("this command needs --manifest".into()))?;
    DatasetManifest::load(path)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool may already exist in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(k) = cli.k {
        config.k = k;
    }
    let lambda_overridden = cli.lambda.is_some();
    if let Some(lambda) = cli.lambda {
        config.lambda = lambda;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;

    match &cli.command {
        Command::Precompute => cmd(cli, &config, |manifest| {
            commands::cmd_precompute(manifest, &config)
        }),
        Command::Match { pair, checkpoint } => cmd(cli, &config, |manifest| {
            commands::cmd_match(
                manifest,
                &config,
                &commands::MatchArgs {
                    pair,
                    out: &cli.out,
                    checkpoint: checkpoint.as_deref(),
                    lambda_overridden,
                },
            )
        }),
        Command::Train { steps, resume } => cmd(cli, &config, |manifest| {
            commands::cmd_train(
                manifest,
                &config,
                &commands::TrainArgs {
                    steps: *steps,
                    resume: resume.as_deref(),
                    out: &cli.out,
                },
            )
        }),
        Command::Refine {
            pair,
            input,
            method,
            iterations,
        } => cmd(cli, &config, |manifest| {
            commands::cmd_refine(
                manifest,
                &config,
                &commands::RefineArgs {
                    pair,
                    input,
                    method,
                    iterations: *iterations,
                    out: &cli.out,
                },
            )
        }),
        Command::Eval { pred, gt, mesh } => commands::cmd_eval(
            &config,
            &commands::EvalArgs {
                pred,
                gt,
                mesh,
                out: &cli.out,
            },
        ),
        Command::ExportDesc {
            shape,
            checkpoint,
            channels,
        } => {
            let channels = parse_channels(channels)?;
            cmd(cli, &config, |manifest| {
                commands::cmd_export_descriptors(
                    manifest,
                    &config,
                    &commands::ExportArgs {
                        shape,
                        checkpoint,
                        channels: &channels,
                        out: &cli.out,
                    },
                )
            })
        }
    }
}

fn cmd<F>(cli: &Cli, _config: &PipelineConfig, f: F) -> Result<(), CliError>
where
    F: FnOnce(&DatasetManifest) -> Result<(), CliError>,
{
    let manifest = load_manifest(cli)?;
    f(&manifest)
}

fn parse_channels(spec: &str) -> Result<Vec<usize>, CliError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::usage(format!("bad channel index {s:?}")))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
