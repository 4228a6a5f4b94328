use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eaf_cli::commands::{
    cmd_attn, cmd_derive, cmd_eval, cmd_infer, cmd_run, cmd_stats, cmd_synth, cmd_verify,
    parse_preset, DataSource,
};
use eaf_cli::config::EffectiveConfig;
use eaf_cli::{CliError, Result};
use eaf_data::ModalityKind;

#[derive(Parser)]
#[command(
    name = "eaf",
    about = "Polarimetric segmentation toolkit: channel derivation, synthetic scenes, \
             attention-fusion training and verification"
)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for every random choice in the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute AoLP/DoLP tensors and preview images for a dataset split.
    Derive {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Histogram one derived channel over a split.
    Stats {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
        /// aolp | dolp | disparity
        #[arg(long, default_value = "dolp")]
        kind: String,
        /// Use the synthetic generator instead of a dataset root.
        #[arg(long)]
        synthetic: bool,
    },
    /// Write a synthetic split in the on-disk dataset layout.
    Synth {
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train a preset (baseline | aolp-ex | dolp-ex | ad-ex | 3path-ex | rgbd).
    Run {
        preset: String,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
        /// Epoch-count override.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
    },
    /// Segment the validation split into indexed-palette PNGs.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
    },
    /// Dump channel-attention weights of a fusion checkpoint.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
    },
    /// Run the numeric self-check suite.
    Verify,
}

fn source<'a>(root: &'a Option<PathBuf>, synthetic: bool) -> Result<DataSource<'a>> {
    match (root, synthetic) {
        (Some(_), true) => Err(CliError::Args(
            "--root and --synthetic are mutually exclusive".into(),
        )),
        (Some(r), false) => Ok(DataSource::Disk { root: r }),
        (None, true) => Ok(DataSource::Synthetic),
        (None, false) => Err(CliError::Args(
            "either --root <dir> or --synthetic is required".into(),
        )),
    }
}

fn parse_kind(kind: &str) -> Result<ModalityKind> {
    match kind {
        "aolp" => Ok(ModalityKind::Aolp),
        "dolp" => Ok(ModalityKind::Dolp),
        "disparity" => Ok(ModalityKind::Disparity),
        other => Err(CliError::Args(format!(
            "unknown channel kind '{other}'; expected aolp, dolp or disparity"
        ))),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = EffectiveConfig::resolve(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
    match cli.cmd {
        Cmd::Derive { root, split } => {
            cmd_derive(&root, &split, &out, &cfg)?;
            Ok(true)
        }
        Cmd::Stats {
            root,
            split,
            kind,
            synthetic,
        } => {
            let src = source(&root, synthetic)?;
            cmd_stats(&src, &split, parse_kind(&kind)?, &out, &cfg)?;
            Ok(true)
        }
        Cmd::Synth { count, split } => {
            cmd_synth(&out, &split, count, &cfg)?;
            Ok(true)
        }
        Cmd::Run {
            preset,
            root,
            synthetic,
            epochs,
        } => {
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let src = source(&root, synthetic)?;
            cmd_run(parse_preset(&preset)?, &src, &out, &cfg)?;
            Ok(true)
        }
        Cmd::Eval {
            checkpoint,
            root,
            synthetic,
        } => {
            let src = source(&root, synthetic)?;
            cmd_eval(&checkpoint, &src, &out, &cfg)?;
            Ok(true)
        }
        Cmd::Infer {
            checkpoint,
            root,
            synthetic,
        } => {
            let src = source(&root, synthetic)?;
            cmd_infer(&checkpoint, &src, &out, &cfg)?;
            Ok(true)
        }
        Cmd::Attn {
            checkpoint,
            root,
            synthetic,
        } => {
            let src = source(&root, synthetic)?;
            cmd_attn(&checkpoint, &src, &out, &cfg)?;
            Ok(true)
        }
        Cmd::Verify => cmd_verify(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
