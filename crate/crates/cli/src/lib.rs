//! Command-line operations of the `vmat` binary, exposed as a library for tests.

pub mod commands;
pub mod error;
pub mod frames;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult, EXIT_CONTRACT, EXIT_IO, EXIT_OK};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "vmat", version, about = "Recurrent video matting: inference, training, evaluation and benchmarks")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict alpha and foreground for a frame sequence.
    Infer(InferArgs),
    /// Score predicted mattes against ground truth.
    Eval(EvalArgs),
    /// Measure throughput, parameters and multiply-accumulates.
    Bench(BenchArgs),
    /// Composite foreground over background with alpha.
    Composite(CompositeArgs),
    /// Write a synthetic matting dataset.
    Synth(SynthArgs),
    /// Run the staged training schedule.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Default,
}

impl From<Preset> for vmat_core::trainer::ModelPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Tiny => vmat_core::trainer::ModelPreset::Tiny,
            Preset::Default => vmat_core::trainer::ModelPreset::Default,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PNG directory, single PNG, or raw planar file (`-` reads stdin).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub downsample: f64,
    /// Learned guided-filter refinement; defaults to on when downsampling.
    #[arg(long, value_enum)]
    pub dgf: Option<Switch>,
    /// On feeds one frame at a time; off feeds `--chunk` frames per forward pass.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub streaming: Switch,
    /// Frames per forward pass in batch mode (default: the whole clip).
    #[arg(long)]
    pub chunk: Option<usize>,
    /// Also write `comp_*.png` over this background (one PNG or a directory of frames).
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Bit depth of the alpha PNGs.
    #[arg(long, default_value_t = 8, value_parser = parse_bits)]
    pub alpha_bits: u8,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Clip directory of `alpha_*.png` (and optionally `fg_*.png`), or a directory of such clips.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated subset of mad,mse,grad,conn,dtssd,fg_mse,miou.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-frame MAD as TSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub config: Preset,
    /// Benchmarks a trained model instead of a freshly initialised one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input extent as WIDTHxHEIGHT.
    #[arg(long, default_value = "512x288")]
    pub resolution: String,
    #[arg(long, default_value_t = 1.0)]
    pub downsample: f64,
    #[arg(long, value_enum)]
    pub dgf: Option<Switch>,
    /// Timed frames.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    #[arg(long)]
    pub fg: PathBuf,
    #[arg(long)]
    pub alpha: PathBuf,
    #[arg(long)]
    pub bg: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub clips: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// `1..4`, `2`, or `1,2`.
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint of an interrupted or earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Directory for checkpoints, the training log and the run manifest.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub model: Option<Preset>,
    /// Overrides iterations per epoch for every stage.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stops after this many iterations in this invocation, leaving a resumable checkpoint.
    #[arg(long)]
    pub halt_after: Option<usize>,
}

fn parse_bits(s: &str) -> Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("expected 8 or 16, got `{s}`")),
    }
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Infer(a) => commands::infer::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Bench(a) => commands::bench::run(&a),
        Command::Composite(a) => commands::composite::run(&a),
        Command::Synth(a) => commands::synth::run(&a),
        Command::Train(a) => commands::train::run(&a),
    }
}
