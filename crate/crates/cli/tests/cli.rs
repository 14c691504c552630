use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patch-defense"))
        .args(args)
        .output()
        .expect("spawn binary")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let clean = dir.path().join("clean");
    ok(&["synth", s(&corpus), "--count", "3", "--size", "64", "--seed", "1"]);
    ok(&["synth", s(&clean), "--count", "2", "--size", "64", "--seed", "9"]);
    assert_eq!(fs::read_dir(&corpus).unwrap().count(), 3);

    let cfg_path = dir.path().join("defense.cfg");
    let out = ok(&[
        "calibrate", s(&clean), "--kernel", "16", "--stride", "8", "--write-config", s(&cfg_path),
    ]);
    assert!(out.starts_with("eps = "));
    let cfg = fs::read_to_string(&cfg_path).unwrap();
    assert!(cfg.contains("kernel = 16") && cfg.contains("min_pts = rho:0.6"));

    let host = corpus.join("host_000.png");
    let patched = dir.path().join("patched.png");
    let mask = dir.path().join("mask.png");
    let out = ok(&[
        "inject", s(&host), "--out-image", s(&patched), "--out-mask", s(&mask), "--size", "20", "--seed", "4",
    ]);
    assert!(out.starts_with("patch 20x20"));
    ok(&[
        "inject", s(&host), "--out-image", s(&patched), "--out-mask", s(&mask), "--size", "20",
        "--kind", "adaptive", "--fragment-size", "16",
    ]);

    let defended = dir.path().join("defended");
    ok(&["defend", s(&corpus), s(&patched), "--out", s(&defended), "--config", s(&cfg_path)]);
    let summary = fs::read_to_string(defended.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(defended.join("patched_sanitized.png").exists());

    let out = ok(&["score", s(&patched), s(&mask), "--config", s(&cfg_path)]);
    assert!(out.contains("patch_pixel_recall: "));

    let hist = dir.path().join("hist.csv");
    let out = ok(&["analyze", s(&patched), "--out", s(&hist), "--kernel", "16", "--stride", "8", "--bins", "8"]);
    assert!(out.contains("separation"));
    assert!(fs::read_to_string(&hist).unwrap().starts_with("bin_left,bin_right,count\n"));

    let eval = dir.path().join("eval");
    let out = ok(&[
        "evaluate", s(&corpus), "--out", s(&eval), "--calibrate", s(&clean), "--kernel", "16", "--stride", "8",
        "--sizes", "12,16",
    ]);
    assert!(out.contains("patch_pixel_recall"));
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("file,seg_precision,seg_recall,pixel_iou,patch_pixel_recall,clean_fp_rate\n"));

    let rerun = dir.path().join("rerun");
    ok(&["evaluate", s(&corpus), "--out", s(&rerun), "--manifest", s(&eval.join("manifest.json"))]);
    assert_eq!(metrics, fs::read_to_string(rerun.join("metrics.csv")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    ok(&["synth", s(&corpus), "--count", "1", "--size", "48"]);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "kernel = 400\nstride = 8\n").unwrap();
    let out = run(&["defend", s(&corpus), "--out", s(&dir.path().join("o")), "--config", s(&cfg)]);
    assert!(!out.status.success());
    ok(&["defend", s(&corpus), "--out", s(&dir.path().join("o")), "--config", s(&cfg), "--kernel", "16"]);
}

#[test]
fn reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.cfg");
    fs::write(&cfg, "kernel 40\n").unwrap();
    let out = run(&["calibrate", s(dir.path()), "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = run(&["defend", "/nonexistent/x.png", "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
}
