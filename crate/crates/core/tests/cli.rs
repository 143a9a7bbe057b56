//! End-to-end runs of the `randpulse` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn randpulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_randpulse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = randpulse(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

fn summary(dir: &Path) -> Value {
    let m: Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    m["summary"].clone()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn window_preset_writes_aligned_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    ok(&["window", "--preset", "fig2", "--out", path(&out)]);
    let files = [
        "expected_window.csv",
        "expected_base_window.csv",
        "ensemble_window.csv",
        "target_window.csv",
    ];
    let omega = column(&out.join(files[0]), "omega");
    assert_eq!(omega.len(), 501);
    assert_eq!(omega[0], 0.0);
    for f in &files[1..] {
        assert_eq!(column(&out.join(f), "omega"), omega, "{f}");
    }
}

#[test]
fn zero_lambda_window_is_the_base_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    ok(&[
        "window",
        "--preset",
        "fig2",
        "--lambda",
        "0",
        "--out",
        path(&out),
    ]);
    let sampled = column(&out.join("ensemble_window.csv"), "ensemble");
    let stderr = column(&out.join("ensemble_window.csv"), "stderr");
    let base = column(&out.join("expected_base_window.csv"), "expected_base");
    let within = (0..base.len())
        .filter(|&i| (sampled[i] - base[i]).abs() <= 3.0 * stderr[i].max(1e-12))
        .count();
    assert!(
        within as f64 >= 0.95 * base.len() as f64,
        "{within}/{}",
        base.len()
    );
}

#[test]
fn missing_target_exits_two_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let missing = tmp.path().join("nope.json");
    let r = randpulse(&[
        "window",
        "--preset",
        "fig2",
        "--target",
        path(&missing),
        "--out",
        path(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn wrong_preset_and_bad_flags_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(
        randpulse(&["cs", "--preset", "fig2", "--out", path(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        randpulse(&["window", "--out", path(&out), "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn noise_free_cs_recovers_the_support() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cs");
    ok(&[
        "cs",
        "--preset",
        "fig3a",
        "--mode",
        "expected",
        "--out",
        path(&out),
    ]);
    let s = summary(&out);
    assert_eq!(s["support_exact"], Value::Bool(true), "{s}");
    for f in [
        "reconstruction.csv",
        "measurements.csv",
        "peaks.csv",
        "cv_path.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn phase_critical_counts_increase() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("p");
    ok(&[
        "phase",
        "--preset",
        "fig3b",
        "--sparsities",
        "2,5,8",
        "--m-values",
        "4:36:2",
        "--trials",
        "20",
        "--out",
        path(&out),
    ]);
    let mc = column(&out.join("critical.csv"), "m_c");
    assert_eq!(mc.len(), 3);
    assert!(mc.windows(2).all(|w| w[0] < w[1]), "{mc:?}");
}

#[test]
fn reduced_comparison_shows_the_crossing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    ok(&[
        "compare",
        "--preset",
        "fig5",
        "--n-sets",
        "20,40,500",
        "--no-scaling",
        "--out",
        path(&out),
    ]);
    let s = summary(&out);
    let threshold = s["resolution_threshold"].as_f64().unwrap();
    let mean = |method: &str, n: u64| {
        s["means"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["method"] == method && r["n_set"] == n)
            .unwrap()["mean_error"]
            .as_f64()
            .unwrap()
    };
    assert!(mean("cs-n667", 40) <= 2.0 * std::f64::consts::PI / 667.0);
    assert!(mean("cpmg", 40) > threshold);
    assert!(mean("cpmg", 500) < threshold);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let base = [
        "cs",
        "--preset",
        "fig3a",
        "--sequences",
        "200",
        "--shots",
        "20",
    ];
    let run = |dir: &Path, workers: &str| {
        let mut args = vec!["--workers", workers];
        args.extend_from_slice(&base);
        args.extend_from_slice(&["--out", path(dir)]);
        ok(&args);
    };
    run(&a, "1");
    run(&b, "3");
    for f in [
        "reconstruction.csv",
        "measurements.csv",
        "peaks.csv",
        "cv_path.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn manifest_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let again = tmp.path().join("again");
    ok(&[
        "window",
        "--preset",
        "fig2",
        "--seed",
        "11",
        "--sequences",
        "50",
        "--out",
        path(&first),
    ]);
    let manifest = first.join("manifest.json");
    ok(&["window", "--config", path(&manifest), "--out", path(&again)]);
    for f in ["ensemble_window.csv", "target_window.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn stages_chain_from_acquire_to_reconstruct() {
    let tmp = tempfile::tempdir().unwrap();
    let spectrum = tmp.path().join("s.json");
    fs::write(
        &spectrum,
        r#"{"kind":"gaussian-peaks","params":{"peaks":[{"center":1.2,"width":0.004,"amplitude":1.0}]},"omega_c":3.141592653589793}"#,
    )
    .unwrap();
    let acq = tmp.path().join("acq");
    ok(&[
        "acquire",
        "--spectrum",
        path(&spectrum),
        "--m",
        "30",
        "--segments",
        "100",
        "--sequences",
        "300",
        "--shots",
        "analytic",
        "--seed",
        "9",
        "--out",
        path(&acq),
    ]);
    let rec = tmp.path().join("rec");
    ok(&[
        "reconstruct",
        "--measurements",
        path(&acq.join("measurements.json")),
        "--grid-points",
        "200",
        "--top",
        "1",
        "--out",
        path(&rec),
    ]);
    let centers = column(&rec.join("peaks.csv"), "center");
    assert!((centers[0] - 1.2).abs() < 0.05, "{centers:?}");
}
