use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use rotquant::art::BulkMode;
use rotquant::io::{read_tensor, write_tensor};
use rotquant::pipeline::{
    apply_to_activations, apply_to_weights, calibrate_mode, CalibrateOptions, RotationMode,
};
use rotquant::quant::{fake_quantize, Granularity, QuantConfig};
use rotquant::Mat64;

use crate::manifest::{ensure_out_dir, write_atomic, RunManifest};
use crate::{resolve_threads, CmdError, CommonArgs};

#[derive(Args)]
pub struct QuantizeArgs {
    /// Activation tensor (RQT1 container), shape tokens × n.
    pub activations: PathBuf,
    /// Weight tensor (RQT1 container), shape out_channels × n.
    pub weights: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Quantization bit width.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=8))]
    pub bits: u32,
    /// Asymmetric (min/max) quantization instead of symmetric.
    #[arg(long)]
    pub asymmetric: bool,
    /// Clip ratio in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub clip_ratio: f64,
    /// Comma-separated rotation modes to evaluate.
    #[arg(long, default_value = "identity,hadamard,art,urt,art-urt")]
    pub modes: String,
    /// Alignment rotation passes during calibration.
    #[arg(long, default_value_t = 1)]
    pub art_passes: usize,
    /// Identity bulk block instead of the random orthogonal one.
    #[arg(long)]
    pub identity_bulk: bool,
    /// Worker threads (capped by RQ_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Include wall-clock timings in the report (makes output bytes vary
    /// across runs).
    #[arg(long)]
    pub timings: bool,
    /// Also write rotated and fake-quantized tensors for the first
    /// requested mode.
    #[arg(long)]
    pub emit_tensors: bool,
}

fn parse_modes(spec: &str) -> Result<Vec<RotationMode>, CmdError> {
    let mut modes = Vec::new();
    for token in spec.split(',') {
        let mode = RotationMode::parse(token).ok_or_else(|| {
            CmdError::format(format!(
                "unknown rotation mode {token:?}; expected identity, hadamard, art, urt or art-urt"
            ))
        })?;
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    if modes.is_empty() {
        return Err(CmdError::format("no rotation modes requested"));
    }
    Ok(modes)
}

pub fn run(args: QuantizeArgs) -> Result<(), CmdError> {
    ensure_out_dir(&args.common.out_dir)?;
    let modes = parse_modes(&args.modes)?;
    let threads = resolve_threads(args.threads);

    let x: Mat64 = read_tensor(&args.activations)?;
    let w: Mat64 = read_tensor(&args.weights)?;

    let cfg = QuantConfig {
        bits: args.bits,
        symmetric: !args.asymmetric,
        granularity: Granularity::PerRow,
        clip_ratio: args.clip_ratio,
    };
    let opts = CalibrateOptions {
        art_passes: args.art_passes,
        bulk: if args.identity_bulk {
            BulkMode::Identity
        } else {
            BulkMode::Random
        },
        threads,
    };

    let mut report = rotquant::pipeline::run(&x, &w, &cfg, args.common.seed, &opts, &modes)
        .map_err(CmdError::from)?;
    if !args.timings {
        report.timings_ns = None;
    }
    for mode in &modes {
        if report.modes[mode.name()].hadamard_replaced {
            eprintln!(
                "warning: width {} has no power-of-two factor side; a seeded random \
                 orthogonal block stands in for the Hadamard",
                x.cols()
            );
            break;
        }
    }

    let report_bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    let report_path = args.common.out_dir.join("report.json");
    write_atomic(&report_path, &report_bytes)?;

    if args.emit_tensors {
        let mode = modes[0];
        let plan = calibrate_mode(&x, args.common.seed, &opts, mode).map_err(CmdError::from)?;
        let xr = apply_to_activations(&x, &plan, threads).map_err(CmdError::from)?;
        let wr = apply_to_weights(&w, &plan, threads).map_err(CmdError::from)?;
        let xq = fake_quantize(&xr, &cfg).map_err(|e| CmdError::numeric(e.to_string()))?;
        let wq = fake_quantize(&wr, &cfg).map_err(|e| CmdError::numeric(e.to_string()))?;
        write_tensor(&args.common.out_dir.join("activations_rotated.rqt"), &xr)?;
        write_tensor(&args.common.out_dir.join("weights_rotated.rqt"), &wr)?;
        write_tensor(&args.common.out_dir.join("activations_fakequant.rqt"), &xq)?;
        write_tensor(&args.common.out_dir.join("weights_fakequant.rqt"), &wq)?;
    }

    let mut manifest = RunManifest::new(
        "quantize",
        args.common.seed,
        json!({
            "bits": args.bits,
            "symmetric": !args.asymmetric,
            "clip_ratio": args.clip_ratio,
            "modes": modes.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "art_passes": args.art_passes,
            "identity_bulk": args.identity_bulk,
            "emit_tensors": args.emit_tensors,
        }),
    );
    manifest.digest_input("activations", &args.activations)?;
    manifest.digest_input("weights", &args.weights)?;
    manifest.write(&args.common.out_dir)?;

    println!("report: {}", report_path.display());
    for (name, mode) in &report.modes {
        println!(
            "  {:<9} product_mse {:>12.6e}  x_util {:>6.4}  residual {:>9.3e}",
            name, mode.product_quant_mse, mode.x_space_utilization, mode.invariance_residual
        );
    }
    Ok(())
}
