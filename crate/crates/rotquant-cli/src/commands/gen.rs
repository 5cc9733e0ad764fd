use clap::Args;
use serde_json::json;

use rotquant::io::write_tensor;
use rotquant::rng::SeededRng;
use rotquant::synth::{gaussian_weights, synthetic_activations, SynthConfig};

use crate::manifest::{ensure_out_dir, RunManifest};
use crate::{CmdError, CommonArgs};

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Token rows of the activation tensor.
    #[arg(long, default_value_t = 128)]
    pub tokens: usize,
    /// Channel width (shared by activations and weights).
    #[arg(long, default_value_t = 1024)]
    pub channels: usize,
    /// Weight output channels.
    #[arg(long, default_value_t = 128)]
    pub out_channels: usize,
    /// Skip the outlier populations; plain Gaussian data.
    #[arg(long)]
    pub benign: bool,
}

pub fn run(args: GenArgs) -> Result<(), CmdError> {
    ensure_out_dir(&args.common.out_dir)?;
    let cfg = if args.benign {
        SynthConfig::benign(args.tokens, args.channels)
    } else {
        SynthConfig::new(args.tokens, args.channels)
    };
    let mut rng = SeededRng::new(args.common.seed);
    let x = synthetic_activations::<f64>(&cfg, &mut rng);
    let w = gaussian_weights::<f64>(args.out_channels, args.channels, &mut rng);

    let x_path = args.common.out_dir.join("activations.rqt");
    let w_path = args.common.out_dir.join("weights.rqt");
    write_tensor(&x_path, &x)?;
    write_tensor(&w_path, &w)?;

    let manifest = RunManifest::new(
        "gen",
        args.common.seed,
        json!({
            "tokens": args.tokens,
            "channels": args.channels,
            "out_channels": args.out_channels,
            "benign": args.benign,
        }),
    );
    manifest.write(&args.common.out_dir)?;
    println!(
        "wrote {} ({}x{}) and {} ({}x{})",
        x_path.display(),
        args.tokens,
        args.channels,
        w_path.display(),
        args.out_channels,
        args.channels
    );
    Ok(())
}
