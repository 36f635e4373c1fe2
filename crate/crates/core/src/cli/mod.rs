//! Command-line surface: dataset synthesis, the three training stages,
//! evaluation, rendering, sweeps and the full reproduction chain.

mod commands;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, ErrorKind};

pub use commands::*;
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Input => EXIT_INPUT,
        ErrorKind::Training => EXIT_TRAINING,
        ErrorKind::Internal => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "dissim", version, about = "Segmentation error detection by visual dissimilarity")]
pub struct Cli {
    /// Base directory for relative run and dataset paths.
    #[arg(long, global = true, env = "DISSIM_RUN_ROOT")]
    pub run_root: Option<PathBuf>,
    /// Worker threads for per-image work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy dataset directory.
    Synth(SynthArgs),
    /// Train the segmentation net, the generator or a detector.
    Train(TrainArgs),
    /// Score a dataset with a trained detector and write a report.
    Eval(EvalArgs),
    /// Write side-by-side panels of input, synthesis, heatmap and masks.
    Render(RenderArgs),
    /// Retrain a detector for each value of a parameter.
    Sweep(SweepArgs),
    /// synth, seg, gan, detectors, eval and render in one go.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ood_rate: Option<f64>,
    #[arg(long)]
    pub corrupt_rate: Option<f64>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub n_objects: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Seg,
    Gan,
    Detector,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: Stage,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub held_out: Option<PathBuf>,
    #[arg(long)]
    pub gan_run: Option<PathBuf>,
    /// resize, deconv, fc, transfer or discriminator.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detector run directory.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// ood, mis or union.
    #[arg(long, default_value = "ood")]
    pub mask: String,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "lambda_d")]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub held_out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Process-wide options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub run_root: Option<PathBuf>,
    pub jobs: usize,
}

impl Context {
    /// Relative paths are taken from the run root when one is set.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.run_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Run one parsed invocation, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> crate::Result<()> {
    let ctx = Context {
        run_root: cli.run_root,
        jobs: cli.jobs.max(1),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, &a, out),
        Command::Train(a) => cmd_train(&ctx, &a, out),
        Command::Eval(a) => cmd_eval(&ctx, &a, out).map(|_| ()),
        Command::Render(a) => cmd_render(&ctx, &a, out),
        Command::Sweep(a) => cmd_sweep(&ctx, &a, out).map(|_| ()),
        Command::Reproduce(a) => cmd_reproduce(&ctx, &a, out),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
