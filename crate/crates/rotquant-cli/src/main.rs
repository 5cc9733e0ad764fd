//! `rotquant`: generate synthetic tensors, run the rotation + quantization
//! pipeline, simulate the Cayley-SGD/STE pathology, benchmark the fused
//! apply, and self-check the numeric invariants.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 file/format error, 3 shape
//! error, 4 numeric failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_SHAPE: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// Error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub message: String,
}

impl CmdError {
    pub fn format(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FORMAT,
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_SHAPE,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<rotquant::io::TensorIoError> for CmdError {
    fn from(e: rotquant::io::TensorIoError) -> Self {
        use rotquant::io::TensorIoError as E;
        match &e {
            E::NonFinite { .. } => CmdError::numeric(e.to_string()),
            _ => CmdError::format(e.to_string()),
        }
    }
}

impl From<rotquant::pipeline::PipelineError> for CmdError {
    fn from(e: rotquant::pipeline::PipelineError) -> Self {
        use rotquant::pipeline::PipelineError as E;
        match &e {
            E::Shape { .. } | E::WidthMismatch { .. } | E::WidthTooSmall(_) => {
                CmdError::shape(e.to_string())
            }
            _ => CmdError::numeric(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rotquant",
    version,
    about = "Rotation-smoothed round-to-nearest quantization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct CommonArgs {
    /// Seed for every random choice; fixed by default so runs reproduce.
    #[arg(long, default_value_t = rotquant::DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory for reports, traces and manifests.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic activation and weight tensors in the RQT1 container.
    Gen(commands::gen::GenArgs),
    /// Calibrate rotations, quantize, and report per-mode quality.
    Quantize(commands::quantize::QuantizeArgs),
    /// Trace Cayley SGD with the quantized (STE) or smooth control loss.
    SimulatePathology(commands::simulate::SimulateArgs),
    /// Time fused vs dense application across a width grid and fit exponents.
    Bench(commands::bench::BenchArgs),
    /// Run the named invariant checks at small sizes.
    Selftest(commands::selftest::SelftestArgs),
}

/// Worker threads: explicit flag, else RQ_THREADS, else available cores.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    let cap = std::env::var("RQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0);
    let available = std::thread::available_parallelism()
        .map(std::num::NonZeroUsize::get)
        .unwrap_or(1);
    match (flag, cap) {
        (Some(f), Some(c)) => f.min(c).max(1),
        (Some(f), None) => f.max(1),
        (None, Some(c)) => c.min(available).max(1),
        (None, None) => available,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => commands::gen::run(args),
        Command::Quantize(args) => commands::quantize::run(args),
        Command::SimulatePathology(args) => commands::simulate::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Selftest(args) => return commands::selftest::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
