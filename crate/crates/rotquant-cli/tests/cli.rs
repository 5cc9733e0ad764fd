//! Command-line behavior: exit codes, flag handling, output schemas.

use std::path::Path;
use std::process::{Command, Output};

use rotquant::rng::SeededRng;
use rotquant::synth::{gaussian_weights, synthetic_activations, SynthConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rotquant"))
}

fn write_inputs(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut rng = SeededRng::new(5);
    let x = synthetic_activations::<f64>(&SynthConfig::new(8, 64), &mut rng);
    let w = gaussian_weights::<f64>(16, 64, &mut rng);
    let xp = dir.join("x.rqt");
    let wp = dir.join("w.rqt");
    rotquant::io::write_tensor(&xp, &x).unwrap();
    rotquant::io::write_tensor(&wp, &w).unwrap();
    (xp, wp)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn quantize_default_reports_all_modes() {
    let dir = tempfile::tempdir().unwrap();
    let (xp, wp) = write_inputs(dir.path());
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let modes = report["modes"].as_object().unwrap();
    for name in ["identity", "hadamard", "art", "urt", "art-urt"] {
        assert!(modes.contains_key(name), "missing mode {name}");
    }
    assert_eq!(modes.len(), 5);
    assert!(report["invariance_residual"].as_f64().unwrap() < 1e-5);
    // Timings stay out of the report unless asked for.
    assert!(report.get("timings_ns").is_none());
}

#[test]
fn quantize_mode_subset_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (xp, wp) = write_inputs(dir.path());
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--modes",
            "art,identity",
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let modes = report["modes"].as_object().unwrap();
    assert_eq!(modes.len(), 2);
    assert!(modes.contains_key("art") && modes.contains_key("identity"));
}

#[test]
fn quantize_missing_file_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["quantize", "nope/missing.rqt", "also/missing.rqt"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.rqt"), "stderr was: {err}");
}

#[test]
fn quantize_bad_magic_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.rqt");
    std::fs::write(&bad, b"JUNKJUNKJUNK").unwrap();
    let (_, wp) = write_inputs(dir.path());
    let out = bin()
        .args(["quantize", bad.to_str().unwrap(), wp.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RQT1"));
}

#[test]
fn quantize_shape_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (xp, _) = write_inputs(dir.path());
    let mut rng = SeededRng::new(6);
    let w_wrong = gaussian_weights::<f64>(16, 32, &mut rng);
    let wp = dir.path().join("w32.rqt");
    rotquant::io::write_tensor(&wp, &w_wrong).unwrap();
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn quantize_zero_activations_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = rotquant::Mat64::zeros(4, 64);
    let xp = dir.path().join("z.rqt");
    rotquant::io::write_tensor(&xp, &zeros).unwrap();
    let (_, wp) = write_inputs(dir.path());
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn quantize_empty_tensor_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let empty = rotquant::Mat64::zeros(0, 64);
    let xp = dir.path().join("e.rqt");
    rotquant::io::write_tensor(&xp, &empty).unwrap();
    let (_, wp) = write_inputs(dir.path());
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn flag_range_validation_exits_2() {
    let out = bin()
        .args(["simulate-pathology", "--steps", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["quantize", "a", "b", "--bits", "9"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quantize_unknown_mode_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (xp, wp) = write_inputs(dir.path());
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--modes",
            "spin",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spin"));
}

#[test]
fn quantize_emits_tensors_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let (xp, wp) = write_inputs(dir.path());
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--modes",
            "art-urt",
            "--emit-tensors",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in [
        "activations_rotated.rqt",
        "weights_rotated.rqt",
        "activations_fakequant.rqt",
        "weights_fakequant.rqt",
    ] {
        let m: rotquant::Mat64 = rotquant::io::read_tensor(&out_dir.join(f)).unwrap();
        assert_eq!(m.cols(), 64, "{f}");
    }
}

#[test]
fn gen_then_quantize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "gen",
            "--tokens",
            "8",
            "--channels",
            "64",
            "--out-channels",
            "8",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = bin()
        .args([
            "quantize",
            dir.path().join("activations.rqt").to_str().unwrap(),
            dir.path().join("weights.rqt").to_str().unwrap(),
            "--out-dir",
            dir.path().join("q").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_smooth_converges_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        let output = bin()
            .args([
                "simulate-pathology",
                "--n",
                "8",
                "--tokens",
                "16",
                "--steps",
                "400",
                "--smooth",
                "--out-dir",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(output.status.success());
        out_dir
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(
        std::fs::read(a.join("trace.csv")).unwrap(),
        std::fs::read(b.join("trace.csv")).unwrap()
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["decay_ratio"].as_f64().unwrap() <= 0.01);
    // CSV header and length
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(trace.starts_with("step,loss,grad_norm\n"));
    assert_eq!(trace.trim_end().lines().count(), 401);
}

#[test]
fn simulate_ste_default_floors() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args([
            "simulate-pathology",
            "--n",
            "8",
            "--tokens",
            "16",
            "--steps",
            "600",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["floor_ratio"].as_f64().unwrap() >= 0.1);
}

#[test]
fn bench_writes_pinned_csv_schema_and_skips_primes() {
    let dir = tempfile::tempdir().unwrap();
    let output = bin()
        .args([
            "bench",
            "--sizes",
            "64,13,256",
            "--tokens",
            "4",
            "--repeats",
            "1",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("13"), "prime width not noted: {err}");
    assert!(
        err.contains("--repeats 1"),
        "variance warning missing: {err}"
    );
    let fused = std::fs::read_to_string(dir.path().join("fused.csv")).unwrap();
    assert!(fused.starts_with("n,n1,n2,T,mean_ns,stddev_ns\n"));
    assert_eq!(fused.trim_end().lines().count(), 3); // header + 2 widths
    let exponents: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("exponents.json")).unwrap()).unwrap();
    assert!(exponents["fused_exponent"].is_number());
}

#[test]
fn selftest_passes_and_injection_fails() {
    let start = std::time::Instant::now();
    let output = bin().args(["selftest"]).output().unwrap();
    assert!(output.status.success(), "{}", stdout(&output));
    assert!(stdout(&output).contains("checks passed"));
    assert!(
        start.elapsed().as_secs() < 60,
        "selftest too slow: {:?}",
        start.elapsed()
    );

    let output = bin()
        .args(["selftest", "--inject-failure", "urt-exactness"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stdout(&output).contains("FAIL urt-exactness"));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("urt-exactness"));
}

#[test]
fn rq_threads_env_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let (xp, wp) = write_inputs(dir.path());
    let out = bin()
        .env("RQ_THREADS", "1")
        .args([
            "quantize",
            xp.to_str().unwrap(),
            wp.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
}
