//! Timing harness for the fused-vs-dense apply comparison and the log-log
//! exponent fit behind the complexity claims.

use std::time::Instant;

use serde::Serialize;

use crate::kron::{factorize, fused_apply_batch, KronError, KronPlan};
use crate::matrix::{random_orthogonal, DenseMatrix};
use crate::rng::SeededRng;

/// One measured configuration; `mean_ns`/`stddev_ns` are per-apply over the
/// whole batch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
    pub mean_ns: f64,
    pub stddev_ns: f64,
}

fn stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Time the fused Kronecker batch apply at width `n` with `t` rows.
pub fn measure_fused(n: usize, t: usize, repeats: usize, seed: u64) -> Result<BenchRow, KronError> {
    let mut rng = SeededRng::new(seed);
    let pair = factorize(n)?;
    let r1 = random_orthogonal::<f64>(pair.n1, &mut rng)?;
    let r2 = random_orthogonal::<f64>(pair.n2, &mut rng)?;
    let plan = KronPlan::new(r1, r2)?;
    let x = DenseMatrix::<f64>::gaussian(t, n, &mut rng);

    let mut samples = Vec::with_capacity(repeats);
    let mut sink = 0.0f64;
    // warmup
    sink += fused_apply_batch(&x, &plan)?.data()[0];
    for _ in 0..repeats {
        let start = Instant::now();
        let out = fused_apply_batch(&x, &plan)?;
        samples.push(start.elapsed().as_nanos() as f64);
        sink += out.data()[0];
    }
    std::hint::black_box(sink);
    let (mean_ns, stddev_ns) = stats(&samples);
    Ok(BenchRow {
        n,
        n1: pair.n1,
        n2: pair.n2,
        t,
        mean_ns,
        stddev_ns,
    })
}

/// Time the dense n×n apply at width `n` with `t` rows. The operator is the
/// materialized Kronecker product of the same factors, so both paths compute
/// the same map and only the algorithm differs.
pub fn measure_dense(n: usize, t: usize, repeats: usize, seed: u64) -> Result<BenchRow, KronError> {
    let mut rng = SeededRng::new(seed);
    let pair = factorize(n)?;
    let r1 = random_orthogonal::<f64>(pair.n1, &mut rng)?;
    let r2 = random_orthogonal::<f64>(pair.n2, &mut rng)?;
    let dense = KronPlan::new(r1, r2)?.materialize();
    let x = DenseMatrix::<f64>::gaussian(t, n, &mut rng);

    let mut samples = Vec::with_capacity(repeats);
    let mut sink = 0.0f64;
    sink += x.matmul(&dense)?.data()[0];
    for _ in 0..repeats {
        let start = Instant::now();
        let out = x.matmul(&dense)?;
        samples.push(start.elapsed().as_nanos() as f64);
        sink += out.data()[0];
    }
    std::hint::black_box(sink);
    let (mean_ns, stddev_ns) = stats(&samples);
    Ok(BenchRow {
        n,
        n1: pair.n1,
        n2: pair.n2,
        t,
        mean_ns,
        stddev_ns,
    })
}

/// Least-squares slope of ln(time) against ln(n): the fitted scaling
/// exponent.
pub fn fit_exponent(rows: &[BenchRow]) -> f64 {
    assert!(rows.len() >= 2, "exponent fit needs at least two sizes");
    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.mean_ns.ln()))
        .collect();
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// CSV with the pinned column set `n,n1,n2,T,mean_ns,stddev_ns`.
pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,n1,n2,T,mean_ns,stddev_ns\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.n1, r.n2, r.t, r.mean_ns, r.stddev_ns
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_fit_recovers_power_law() {
        let rows: Vec<BenchRow> = [(1024usize, 1e6), (4096, 1.6e7), (16384, 2.56e8)]
            .iter()
            .map(|&(n, t)| BenchRow {
                n,
                n1: 0,
                n2: 0,
                t: 1,
                mean_ns: t,
                stddev_ns: 0.0,
            })
            .collect();
        // times grow as n²
        let e = fit_exponent(&rows);
        assert!((e - 2.0).abs() < 1e-9, "exponent {e}");
    }

    #[test]
    fn csv_has_pinned_columns() {
        let row = BenchRow {
            n: 64,
            n1: 8,
            n2: 8,
            t: 4,
            mean_ns: 123.0,
            stddev_ns: 4.5,
        };
        let csv = rows_to_csv(&[row]);
        assert!(csv.starts_with("n,n1,n2,T,mean_ns,stddev_ns\n"));
        assert!(csv.contains("64,8,8,4,123,4.5"));
    }

    #[test]
    fn fused_and_dense_measure_small_sizes() {
        let fused = measure_fused(64, 8, 2, 1).unwrap();
        let dense = measure_dense(64, 8, 2, 1).unwrap();
        assert_eq!(fused.n1, 8);
        assert_eq!(dense.n2, 8);
        assert!(fused.mean_ns > 0.0 && dense.mean_ns > 0.0);
    }
}
