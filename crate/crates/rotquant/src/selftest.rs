//! Fast named invariant checks over every subsystem, exposed through the
//! CLI `selftest` command. Each check runs at small sizes; the whole suite
//! finishes in seconds.

use crate::art::{build_art, detect_outlier, BulkMode};
use crate::givens::{apply_givens, map_to_axis, optimal_smoothing_angle, GivensRotation};
use crate::hadamard::hadamard;
use crate::io::{read_tensor, write_tensor};
use crate::kron::{factorize, fused_apply, KronPlan};
use crate::matrix::{random_orthogonal, vec_norm, DenseMatrix};
use crate::pathology::{cayley_step, run_simulation, SimConfig};
use crate::pipeline::{apply_to_activations, apply_to_weights, calibrate, CalibrateOptions};
use crate::quant::{dequantize, quantize, QuantConfig};
use crate::rng::SeededRng;
use crate::synth::{gaussian_weights, synthetic_activations, SynthConfig};
use crate::urt::{build_urt, make_uniform_target};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = (&'static str, fn() -> Result<String, String>);

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn check_rng_determinism() -> Result<String, String> {
    let mut a = SeededRng::new(7);
    let mut b = SeededRng::new(7);
    for _ in 0..100 {
        ensure(a.next_u64() == b.next_u64(), "streams diverged".into())?;
    }
    Ok("identical streams over 100 draws".into())
}

fn check_orthogonal_residual() -> Result<String, String> {
    let mut rng = SeededRng::new(11);
    let q = random_orthogonal::<f64>(32, &mut rng).map_err(|e| e.to_string())?;
    let res = q.orthogonality_residual();
    ensure(res <= 1e-10, format!("residual {res:.3e} > 1e-10"))?;
    Ok(format!("QtQ residual {res:.3e}"))
}

fn check_orthogonal_norms() -> Result<String, String> {
    let mut rng = SeededRng::new(12);
    let q = random_orthogonal::<f64>(48, &mut rng).map_err(|e| e.to_string())?;
    let x = DenseMatrix::<f64>::gaussian(1, 48, &mut rng);
    let xq = x.matmul(&q).map_err(|e| e.to_string())?;
    let (n0, n1) = (vec_norm(x.row(0)), vec_norm(xq.row(0)));
    let rel = (n0 - n1).abs() / n0;
    ensure(rel <= 1e-8, format!("norm drift {rel:.3e}"))?;
    Ok(format!("norm drift {rel:.3e}"))
}

fn check_givens_norms() -> Result<String, String> {
    let mut rng = SeededRng::new(13);
    let v: Vec<f64> = (0..256).map(|_| rng.next_normal()).collect();
    let chain = map_to_axis(&v).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..256).map(|_| rng.next_normal()).collect();
    let out = chain.apply(&x).map_err(|e| e.to_string())?;
    let rel = (vec_norm(&x) - vec_norm(&out)).abs() / vec_norm(&x);
    ensure(rel <= 1e-10, format!("chain norm drift {rel:.3e}"))?;
    Ok(format!("chain norm drift {rel:.3e}"))
}

fn check_smoothing_value() -> Result<String, String> {
    let mut rng = SeededRng::new(14);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, b) = (rng.next_normal() * 50.0, rng.next_normal() * 50.0);
        if (a + b).abs() < 1e-9 {
            continue;
        }
        let theta = optimal_smoothing_angle(a, b).map_err(|e| e.to_string())?;
        let out =
            apply_givens(&[a, b], &GivensRotation::new(0, 1, theta)).map_err(|e| e.to_string())?;
        let expected = ((a * a + b * b) / 2.0).sqrt();
        let rel = (out[0].abs().max(out[1].abs()) - expected).abs() / expected;
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-9, format!("value deviation {worst:.3e}"))?;
    Ok(format!("worst value deviation {worst:.3e}"))
}

fn check_smoothing_optimality() -> Result<String, String> {
    let mut rng = SeededRng::new(15);
    for _ in 0..50 {
        let (a, b) = (rng.next_normal() * 10.0, rng.next_normal() * 10.0);
        if (a + b).abs() < 1e-9 {
            continue;
        }
        let theta = optimal_smoothing_angle(a, b).map_err(|e| e.to_string())?;
        let out =
            apply_givens(&[a, b], &GivensRotation::new(0, 1, theta)).map_err(|e| e.to_string())?;
        let closed = out[0].abs().max(out[1].abs());
        let mut grid_min = f64::INFINITY;
        for k in 0..10_000 {
            let t = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / 10_000.0;
            let x1 = a * t.cos() + b * t.sin();
            let x2 = -a * t.sin() + b * t.cos();
            grid_min = grid_min.min(x1.abs().max(x2.abs()));
        }
        ensure(
            closed <= grid_min + 1e-6,
            format!("closed form {closed} above grid minimum {grid_min}"),
        )?;
    }
    Ok("closed form at or below a 10^4-point angle grid on 50 pairs".into())
}

fn check_map_to_axis() -> Result<String, String> {
    let mut rng = SeededRng::new(16);
    let v: Vec<f64> = (0..64).map(|_| rng.next_normal()).collect();
    let norm = vec_norm(&v);
    let chain = map_to_axis(&v).map_err(|e| e.to_string())?;
    let out = chain.apply(&v).map_err(|e| e.to_string())?;
    ensure(
        (out[0] - norm).abs() <= 1e-10 * norm,
        format!("head {} vs norm {}", out[0], norm),
    )?;
    let tail = out[1..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    ensure(tail <= 1e-10 * norm, format!("tail residue {tail:.3e}"))?;
    let back = chain.inverse().apply(&out).map_err(|e| e.to_string())?;
    let drift = v
        .iter()
        .zip(back.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(drift <= 1e-10, format!("round trip drift {drift:.3e}"))?;
    Ok(format!("tail {tail:.3e}, round-trip drift {drift:.3e}"))
}

fn check_hadamard() -> Result<String, String> {
    let h = hadamard::<f64>(64).map_err(|e| e.to_string())?;
    let res = h.orthogonality_residual();
    ensure(res <= 1e-12, format!("residual {res:.3e}"))?;
    Ok(format!("HtH residual {res:.3e}"))
}

fn check_uniform_target() -> Result<String, String> {
    let mut rng = SeededRng::new(17);
    let t = make_uniform_target::<f64>(64, 9.0, &mut rng).map_err(|e| e.to_string())?;
    let norm_err = (vec_norm(t.values()) - 9.0).abs();
    ensure(
        norm_err <= 1e-12 * 9.0,
        format!("norm error {norm_err:.3e}"),
    )?;
    Ok(format!("target norm error {norm_err:.3e}"))
}

fn check_urt() -> Result<String, String> {
    let mut rng = SeededRng::new(18);
    let v: Vec<f64> = (0..128).map(|_| rng.next_normal() * 2.0).collect();
    let plan = build_urt(&v, &mut rng).map_err(|e| e.to_string())?;
    ensure(
        plan.rotation_count() == 254,
        format!("rotation count {}", plan.rotation_count()),
    )?;
    let mapped = plan.apply_vec(&v);
    let worst = mapped
        .iter()
        .zip(plan.target().values().iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(worst <= 1e-8, format!("target deviation {worst:.3e}"))?;
    Ok(format!("profile-to-target deviation {worst:.3e}"))
}

fn check_kron_vec_trick() -> Result<String, String> {
    let mut rng = SeededRng::new(19);
    for (n1, n2) in [(2usize, 3usize), (4, 4), (5, 8)] {
        let r1 = random_orthogonal::<f64>(n1, &mut rng).map_err(|e| e.to_string())?;
        let r2 = random_orthogonal::<f64>(n2, &mut rng).map_err(|e| e.to_string())?;
        let plan = KronPlan::new(r1, r2).map_err(|e| e.to_string())?;
        let dense = plan.materialize();
        let v: Vec<f64> = (0..n1 * n2).map(|_| rng.next_normal()).collect();
        let fused = fused_apply(&v, &plan).map_err(|e| e.to_string())?;
        let explicit = DenseMatrix::from_vec(1, n1 * n2, v)
            .matmul(&dense)
            .map_err(|e| e.to_string())?;
        for (a, b) in fused.iter().zip(explicit.row(0).iter()) {
            ensure(
                (a - b).abs() <= 1e-9,
                format!("fused/explicit mismatch at ({n1},{n2})"),
            )?;
        }
    }
    Ok("fused equals explicit Kronecker on 3 factor shapes".into())
}

fn check_factorize() -> Result<String, String> {
    for n in 2..2000usize {
        let p = factorize(n).map_err(|e| e.to_string())?;
        ensure(
            p.n1 * p.n2 == n && p.n1 <= p.n2,
            format!("bad pair for {n}"),
        )?;
    }
    Ok("divisor pairs valid for n in 2..2000".into())
}

fn check_quant_bound() -> Result<String, String> {
    let mut rng = SeededRng::new(20);
    let x = DenseMatrix::<f64>::gaussian(16, 16, &mut rng);
    let cfg = QuantConfig::default();
    let q = quantize(&x, &cfg).map_err(|e| e.to_string())?;
    let deq = dequantize(&q);
    let bound = q.scales()[0] / 2.0 + 1e-12;
    for (a, b) in x.data().iter().zip(deq.data().iter()) {
        ensure((a - b).abs() <= bound, "error above scale/2".to_string())?;
    }
    Ok(format!("round-trip error within scale/2 = {:.3e}", bound))
}

fn check_quant_idempotence() -> Result<String, String> {
    let mut rng = SeededRng::new(21);
    let x = DenseMatrix::<f64>::gaussian(12, 12, &mut rng);
    let cfg = QuantConfig::default();
    let q1 = quantize(&x, &cfg).map_err(|e| e.to_string())?;
    let q2 = quantize(&dequantize(&q1), &cfg).map_err(|e| e.to_string())?;
    ensure(
        q1.codes() == q2.codes(),
        "codes changed on requantize".into(),
    )?;
    Ok("requantization reproduces identical codes".into())
}

fn check_pipeline_invariance() -> Result<String, String> {
    let mut rng = SeededRng::new(22);
    let x = synthetic_activations::<f64>(&SynthConfig::new(16, 64), &mut rng);
    let w = gaussian_weights::<f64>(24, 64, &mut rng);
    let plan = calibrate(&x, 5, &CalibrateOptions::default()).map_err(|e| e.to_string())?;
    let xr = apply_to_activations(&x, &plan, 1).map_err(|e| e.to_string())?;
    let wr = apply_to_weights(&w, &plan, 1).map_err(|e| e.to_string())?;
    let exact = x.matmul(&w.transpose()).map_err(|e| e.to_string())?;
    let rotated = xr.matmul(&wr.transpose()).map_err(|e| e.to_string())?;
    let residual = rotated
        .frobenius_distance(&exact)
        .map_err(|e| e.to_string())?
        / exact.frobenius_norm();
    ensure(
        residual <= 1e-5,
        format!("invariance residual {residual:.3e}"),
    )?;
    Ok(format!("invariance residual {residual:.3e}"))
}

fn check_pipeline_orthogonality() -> Result<String, String> {
    let mut rng = SeededRng::new(23);
    let x = synthetic_activations::<f64>(&SynthConfig::new(16, 64), &mut rng);
    let plan = calibrate(&x, 6, &CalibrateOptions::default()).map_err(|e| e.to_string())?;
    let res = plan.materialize().orthogonality_residual();
    ensure(res <= 1e-8, format!("plan residual {res:.3e}"))?;
    Ok(format!("materialized plan residual {res:.3e}"))
}

fn check_art_reduction() -> Result<String, String> {
    let mut rng = SeededRng::new(24);
    let mut x = DenseMatrix::<f64>::gaussian(32, 64, &mut rng);
    x[(3, 17)] = 500.0;
    let report = detect_outlier(&x).map_err(|e| e.to_string())?;
    ensure(
        report.outlier_dim == 17,
        "missed the injected outlier".into(),
    )?;
    let plan = build_art(&report, &x, &mut rng, BulkMode::Random).map_err(|e| e.to_string())?;
    let rotated = plan.apply_to_matrix(&x);
    let before = x.column_max_abs()[17];
    let after = rotated.column_max_abs()[17];
    ensure(
        after * 1.3 <= before,
        format!("outlier channel {before:.1} -> {after:.1}"),
    )?;
    Ok(format!("outlier channel {before:.1} -> {after:.1}"))
}

fn check_cayley() -> Result<String, String> {
    let mut rng = SeededRng::new(25);
    let mut r = random_orthogonal::<f64>(8, &mut rng).map_err(|e| e.to_string())?;
    for _ in 0..25 {
        let grad = DenseMatrix::<f64>::gaussian(8, 8, &mut rng);
        r = cayley_step(&r, &grad, 0.05).map_err(|e| e.to_string())?;
    }
    let res = r.orthogonality_residual();
    ensure(res <= 1e-8, format!("trajectory residual {res:.3e}"))?;
    Ok(format!("trajectory residual {res:.3e}"))
}

fn check_sim_smoke() -> Result<String, String> {
    let cfg = SimConfig::new(8, 16, 30);
    let outcome = run_simulation::<f64>(&cfg).map_err(|e| e.to_string())?;
    ensure(outcome.trace.len() == 30, "trace truncated".into())?;
    ensure(
        outcome.trace.iter().all(|t| t.loss.is_finite()),
        "non-finite loss".into(),
    )?;
    Ok("30-step quantized-loss trace finite".into())
}

fn check_io_round_trip() -> Result<String, String> {
    let mut rng = SeededRng::new(26);
    let m = DenseMatrix::<f64>::gaussian(3, 5, &mut rng);
    let path = std::env::temp_dir().join(format!("rotquant-selftest-{}.rqt", std::process::id()));
    write_tensor(&path, &m).map_err(|e| e.to_string())?;
    let back = read_tensor::<f64>(&path).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_file(&path);
    ensure(m == back, "round trip not bit-exact".into())?;
    Ok("container round trip bit-exact".into())
}

const CHECKS: &[Check] = &[
    ("rng-determinism", check_rng_determinism),
    ("orthogonal-qtq-residual", check_orthogonal_residual),
    ("orthogonal-norm-preservation", check_orthogonal_norms),
    ("givens-chain-norm-preservation", check_givens_norms),
    ("smoothing-angle-value", check_smoothing_value),
    ("smoothing-angle-optimality", check_smoothing_optimality),
    ("map-to-axis-exactness", check_map_to_axis),
    ("hadamard-orthogonality", check_hadamard),
    ("uniform-target-norm", check_uniform_target),
    ("urt-exactness", check_urt),
    ("kron-vec-trick", check_kron_vec_trick),
    ("kron-factorize", check_factorize),
    ("quant-round-trip-bound", check_quant_bound),
    ("quant-idempotence", check_quant_idempotence),
    ("pipeline-invariance", check_pipeline_invariance),
    ("pipeline-orthogonality", check_pipeline_orthogonality),
    ("art-outlier-reduction", check_art_reduction),
    ("cayley-orthogonality", check_cayley),
    ("simulation-smoke", check_sim_smoke),
    ("io-round-trip", check_io_round_trip),
];

/// Run every named check. `inject_failure` forces the named check to fail,
/// exercising the reporting path end to end.
pub fn run_selftest(inject_failure: Option<&str>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            if inject_failure == Some(*name) {
                return CheckResult {
                    name,
                    passed: false,
                    detail: "injected failure (test hook)".into(),
                };
            }
            match f() {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                },
                Err(detail) => CheckResult {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}
