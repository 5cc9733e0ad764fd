use clap::Args;
use serde_json::json;

use rotquant::kron::factorize;
use rotquant::scaling::{fit_exponent, measure_dense, measure_fused, rows_to_csv, BenchRow};

use crate::manifest::{ensure_out_dir, write_atomic, RunManifest};
use crate::{CmdError, CommonArgs};

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated width grid.
    #[arg(long, default_value = "1024,4096,16384")]
    pub sizes: String,
    /// Rows per timed batch apply.
    #[arg(long, default_value_t = 64)]
    pub tokens: usize,
    /// Timed repetitions per configuration.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Skip the dense baseline (fused only).
    #[arg(long)]
    pub no_dense: bool,
}

fn parse_sizes(spec: &str) -> Result<Vec<usize>, CmdError> {
    let mut sizes = Vec::new();
    for token in spec.split(',') {
        let n: usize = token
            .trim()
            .parse()
            .map_err(|_| CmdError::format(format!("bad size {token:?}")))?;
        sizes.push(n);
    }
    if sizes.is_empty() {
        return Err(CmdError::format("empty size grid"));
    }
    Ok(sizes)
}

pub fn run(args: BenchArgs) -> Result<(), CmdError> {
    ensure_out_dir(&args.common.out_dir)?;
    if args.repeats < 2 {
        eprintln!(
            "warning: --repeats {} gives no variance estimate",
            args.repeats
        );
    }
    let sizes = parse_sizes(&args.sizes)?;

    let mut fused_rows: Vec<BenchRow> = Vec::new();
    let mut dense_rows: Vec<BenchRow> = Vec::new();
    for &n in &sizes {
        let pair = factorize(n).map_err(|e| CmdError::shape(e.to_string()))?;
        if pair.is_degenerate() {
            eprintln!("note: skipping prime width {n}: factorization degenerates to (1, {n})");
            continue;
        }
        let fused = measure_fused(n, args.tokens, args.repeats.max(1), args.common.seed)
            .map_err(|e| CmdError::numeric(e.to_string()))?;
        println!(
            "fused  n={:<6} ({}x{})  mean {:>12.0} ns",
            n, fused.n1, fused.n2, fused.mean_ns
        );
        fused_rows.push(fused);
        if !args.no_dense {
            let dense = measure_dense(n, args.tokens, args.repeats.max(1), args.common.seed)
                .map_err(|e| CmdError::numeric(e.to_string()))?;
            println!(
                "dense  n={:<6} ({}x{})  mean {:>12.0} ns",
                n, dense.n1, dense.n2, dense.mean_ns
            );
            dense_rows.push(dense);
        }
    }
    if fused_rows.len() < 2 {
        return Err(CmdError::format(
            "need at least two non-degenerate widths to fit an exponent",
        ));
    }

    write_atomic(
        &args.common.out_dir.join("fused.csv"),
        rows_to_csv(&fused_rows).as_bytes(),
    )?;
    let fused_exp = fit_exponent(&fused_rows);
    let dense_exp = if dense_rows.len() >= 2 {
        write_atomic(
            &args.common.out_dir.join("dense.csv"),
            rows_to_csv(&dense_rows).as_bytes(),
        )?;
        Some(fit_exponent(&dense_rows))
    } else {
        None
    };

    let exponents = json!({
        "fused_exponent": fused_exp,
        "dense_exponent": dense_exp,
        "tokens": args.tokens,
        "repeats": args.repeats,
    });
    write_atomic(
        &args.common.out_dir.join("exponents.json"),
        &serde_json::to_vec_pretty(&exponents).expect("serializes"),
    )?;

    let manifest = RunManifest::new(
        "bench",
        args.common.seed,
        json!({
            "sizes": sizes,
            "tokens": args.tokens,
            "repeats": args.repeats,
            "no_dense": args.no_dense,
        }),
    );
    manifest.write(&args.common.out_dir)?;

    match dense_exp {
        Some(d) => println!("fitted exponents: fused {fused_exp:.3}, dense {d:.3}"),
        None => println!("fitted exponent: fused {fused_exp:.3}"),
    }
    Ok(())
}
