//! `mvoct` — polar-domain IVOCT microvessel analysis pipeline.
//!
//! Subcommands cover the whole pipeline: phantom generation, offset-angle
//! augmentation, pre-processing, network training, inference with candidate
//! classification, evaluation, 3-D track reconstruction, fold aggregation,
//! and the end-to-end cross-validated run.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 training
//! failure.

mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvoct_core::Error;

#[derive(Parser)]
#[command(
    name = "mvoct",
    version,
    about = "Microvessel analysis for polar IVOCT pullbacks"
)]
struct Cli {
    /// Global random seed; every stochastic stage derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for frame-parallel stages (0 = all cores). Results are
    /// independent of this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Emit one JSON object per log event on stderr.
    #[arg(long, global = true)]
    log_json: bool,

    /// Flat JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with ground truth.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        /// Frames per segment.
        #[arg(long)]
        frames: Option<usize>,
        /// Number of segments (1 writes the pullback directly into --out,
        /// more create seg_### subdirectories).
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Re-cut a pullback at shifted starting A-lines (offset-angle
    /// augmentation); writes one subdirectory per shift.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        shifts: Option<usize>,
        #[arg(long)]
        increment: Option<usize>,
    },
    /// Pre-process a pullback directory into network-ready frames plus
    /// per-frame transform records.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the segmentation network on pre-processed segments.
    TrainSeg {
        /// Comma-separated pre-processed segment directories for training.
        #[arg(long, value_delimiter = ',')]
        train: Vec<PathBuf>,
        /// Comma-separated validation segment directories.
        #[arg(long, value_delimiter = ',')]
        val: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the candidate classifier from a segmentation checkpoint.
    TrainClf {
        #[arg(long, value_delimiter = ',')]
        train: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        val: Vec<PathBuf>,
        #[arg(long)]
        seg_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment, classify candidates, and refine masks for a pre-processed
    /// segment.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seg_checkpoint: PathBuf,
        #[arg(long)]
        clf_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted masks against reference masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Link refined masks into 3-D tracks and export PLY + CSV.
    Reconstruct3d {
        /// Pre-processed segment directory (supplies meta + transforms).
        #[arg(long)]
        data: PathBuf,
        /// Directory of refined masks (defaults to --data's masks).
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate fold reports into a single summary.
    Report {
        #[arg(long, value_delimiter = ',')]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// End-to-end grouped cross-validation over a phantom corpus.
    Pipeline {
        /// Corpus directory of segment subdirectories (or a single segment).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        shifts: Option<usize>,
    },
}

fn main() -> ExitCode {
    // Usage errors (unknown flags/subcommands, missing args) exit 1 with no
    // partial outputs.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap renders its own message (help/version go to stdout).
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let log = logging::Logger::new(cli.log_json);

    match commands::run(&cli, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log.error(&err);
            match err {
                Error::Training(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
