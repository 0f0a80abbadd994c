//! `rgbe-sparse`: voxelize event streams, compute sparsification maps, run the
//! two-backbone pipeline and generate synthetic scenes.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rgbe_sparse::synth::{Complexity, WINDOW_US};

#[derive(Parser)]
#[command(
    name = "rgbe-sparse",
    version,
    about = "Event-guided token sparsification for RGB + event backbones"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Sensor window used to validate an event file.
#[derive(Args, Clone, Copy)]
pub struct WindowArgs {
    /// Window start in microseconds.
    #[arg(long, default_value_t = 0)]
    pub window_start: u64,
    /// Window end in microseconds.
    #[arg(long, default_value_t = WINDOW_US)]
    pub window_end: u64,
}

#[derive(Args)]
pub struct ModelArgs {
    /// RGB image (binary PPM, or PGM replicated to three channels).
    pub image: PathBuf,
    /// Event file (CSV `x,y,t,p` or EVT1).
    pub events: PathBuf,
    /// TOML model configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for weight initialization. Precedence: this flag, then
    /// `FOCUS_SEED`, then the config file, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an event file into a voxel grid file.
    Voxelize {
        events: PathBuf,
        #[arg(long, default_value_t = rgbe_sparse::event::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-stage sparsification maps and kept ratios.
    Sparsify(ModelArgs),
    /// Run the full pipeline and dump features, FLOP report and manifest.
    Run {
        #[command(flatten)]
        model: ModelArgs,
        /// Also run with all-ones masks and report the reduction between runs.
        #[arg(long)]
        dense_baseline: bool,
    },
    /// Generate a synthetic scene.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = Complexity::Medium)]
        complexity: Complexity,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Voxelize {
            events,
            bins,
            width,
            height,
            window,
            out,
        } => commands::voxelize(&events, bins, width, height, window, &out),
        Command::Sparsify(args) => commands::sparsify(&args),
        Command::Run { model, dense_baseline } => commands::run(&model, dense_baseline),
        Command::Synth {
            seed,
            complexity,
            size,
            out,
        } => commands::synth(seed, complexity, size, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
