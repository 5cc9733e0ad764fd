use clap::Args;
use serde_json::json;

use rotquant::pathology::{run_simulation, summarize, trace_to_csv, LrSchedule, SimConfig};

use crate::manifest::{ensure_out_dir, write_atomic, RunManifest};
use crate::{CmdError, CommonArgs};

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Rotation dimension.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Activation token rows.
    #[arg(long, default_value_t = 64)]
    pub tokens: usize,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Constant learning rate instead of linear decay.
    #[arg(long)]
    pub constant_lr: bool,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=8))]
    pub bits: u32,
    /// Smooth control objective (no quantizer in the loss).
    #[arg(long)]
    pub smooth: bool,
    /// Differentiate through the quantization scale instead of detaching it.
    #[arg(long)]
    pub diff_scale: bool,
}

pub fn run(args: SimulateArgs) -> Result<(), CmdError> {
    ensure_out_dir(&args.common.out_dir)?;
    let cfg = SimConfig {
        lr: args.lr,
        lr_schedule: if args.constant_lr {
            LrSchedule::Constant
        } else {
            LrSchedule::LinearDecay
        },
        bits: args.bits,
        quantize_in_loss: !args.smooth,
        differentiate_scale: args.diff_scale,
        seed: args.common.seed,
        ..SimConfig::new(args.n, args.tokens, args.steps as usize)
    };

    let outcome = run_simulation::<f64>(&cfg).map_err(|e| CmdError::numeric(e.to_string()))?;
    let summary = summarize(&cfg, &outcome);

    let trace_path = args.common.out_dir.join("trace.csv");
    write_atomic(&trace_path, trace_to_csv(&outcome.trace).as_bytes())?;
    let summary_path = args.common.out_dir.join("summary.json");
    write_atomic(
        &summary_path,
        &serde_json::to_vec_pretty(&summary).expect("summary serializes"),
    )?;

    let manifest = RunManifest::new(
        "simulate-pathology",
        args.common.seed,
        json!({
            "n": args.n,
            "tokens": args.tokens,
            "steps": args.steps,
            "lr": args.lr,
            "lr_schedule": if args.constant_lr { "constant" } else { "linear-decay" },
            "bits": args.bits,
            "smooth": args.smooth,
            "diff_scale": args.diff_scale,
        }),
    );
    manifest.write(&args.common.out_dir)?;

    println!("trace: {}", trace_path.display());
    println!("summary: {}", summary_path.display());
    println!(
        "mode {}  decay_ratio {:.3e}  floor_ratio {:.3}  final_loss {:.3e}",
        if args.smooth { "smooth" } else { "ste" },
        summary.decay_ratio,
        summary.floor_ratio,
        summary.final_loss
    );
    Ok(())
}
