use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqfield"))
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("spawn cqfield")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "cqfield {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    /// A tiny dataset: 4 views of 16x16 pixels on an 8^3 grid.
    fn data(&self) -> String {
        let d = self.arg("data");
        if !Path::new(&d).exists() {
            ok(&["synth", "--views", "4", "--res", "16", "--grid-res", "8", "--out", &d]);
        }
        d
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        self.train_for(out, "20", extra)
    }

    fn train_for(&self, out: &str, iterations: &str, extra: &[&str]) -> Output {
        let data = self.data();
        let out = self.arg(out);
        let mut args = vec![
            "train", "--data", &data, "--out", &out, "--iterations", iterations, "--batch-rays", "32", "--samples", "8",
            "--set", "net.geometry_width=8", "--set", "net.color_width=8", "--set", "train.log_every=10",
        ];
        args.extend(extra);
        run(&args)
    }
}

#[test]
fn synth_writes_the_dataset_contract() {
    let w = Work::new();
    let d = w.data();
    let dir = Path::new(&d);
    for f in ["cameras.json", "scene.json", "grid.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let images = fs::read_dir(dir.join("images")).unwrap().count();
    assert_eq!(images, 4);
    let cams: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("cameras.json")).unwrap()).unwrap();
    assert_eq!(cams.as_array().unwrap().len(), 4);
    let grid: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("grid.json")).unwrap()).unwrap();
    assert_eq!(grid["resolution"], 8);

    // Refuses to overwrite without --force.
    let again = run(&["synth", "--views", "4", "--res", "16", "--out", &d]);
    assert_eq!(again.status.code(), Some(2));
    ok(&["synth", "--views", "4", "--res", "16", "--out", &d, "--force"]);
}

#[test]
fn synth_rejects_single_view() {
    let w = Work::new();
    let out = run(&["synth", "--views", "1", "--out", &w.arg("d")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_outputs_and_rerun_identity() {
    let w = Work::new();
    assert!(w.train("a", &[]).status.success());
    assert!(w.train("b", &[]).status.success());
    for f in ["checkpoint.bin", "train_log.csv", "manifest.json"] {
        assert!(w.path("a").join(f).is_file(), "missing {f}");
    }
    assert_eq!(
        fs::read(w.path("a/checkpoint.bin")).unwrap(),
        fs::read(w.path("b/checkpoint.bin")).unwrap()
    );
    let log = fs::read_to_string(w.path("a/train_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iter,loss,psnr_holdout"));
    assert_eq!(lines.count(), 2);
    ok(&["verify", &w.arg("a")]);
}

#[test]
fn unknown_config_key_is_named() {
    let w = Work::new();
    let cfg = w.path("bad.cfg");
    fs::write(&cfg, "# comment\ntrain.iterations = 5\ntrain.warp_drive = 9\n").unwrap();
    let out = w.train("a", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("train.warp_drive"), "{}", stderr(&out));

    let out = w.train("b", &["--set", "render.nonsense=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("render.nonsense"), "{}", stderr(&out));
}

#[test]
fn both_coordinate_modes_train() {
    let w = Work::new();
    for mode in ["discrete", "continuous"] {
        let out = w.train(mode, &["--mode", mode]);
        assert!(out.status.success(), "{mode}: {}", stderr(&out));
    }
    assert_ne!(
        fs::read(w.path("discrete/checkpoint.bin")).unwrap(),
        fs::read(w.path("continuous/checkpoint.bin")).unwrap()
    );
}

#[test]
fn stats_schema_and_usage_errors() {
    let w = Work::new();
    let data = w.data();
    let zero = run(&["stats", "--data", &data, "--out", &w.arg("z"), "--monitor", "0"]);
    assert_eq!(zero.status.code(), Some(1));

    ok(&["stats", "--data", &data, "--out", &w.arg("s"), "--monitor", "64", "--steps", "20", "--row-every", "5"]);
    let csv = fs::read_to_string(w.path("s/stats.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 9, "{header:?}");
    assert_eq!(header[0], "iter");
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').count() == 9));
    let ratios: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("s/ratios.json")).unwrap()).unwrap();
    assert!(ratios["unique_ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn tampered_checkpoint_fails_verification() {
    let w = Work::new();
    assert!(w.train("a", &[]).status.success());
    let ck = w.path("a/checkpoint.bin");
    let mut bytes = fs::read(&ck).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    fs::write(&ck, bytes).unwrap();
    let out = run(&["verify", &w.arg("a")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MISMATCH"));
}

#[test]
fn extract_and_eval_handle_empty_meshes() {
    let w = Work::new();
    assert!(w.train("a", &[]).status.success());
    let ck = w.arg("a/checkpoint.bin");
    // A level of 0.999 is above every occupancy of an untrained network.
    ok(&["extract", "--checkpoint", &ck, "--out", &w.arg("m"), "--mc-res", "16", "--level", "0.999"]);
    let obj = fs::read_to_string(w.path("m/mesh.obj")).unwrap();
    assert!(!obj.lines().any(|l| l.starts_with("f ")));
    let out = run(&["eval", "--mesh", &w.arg("m/mesh.obj"), "--data", &w.data(), "--out", &w.arg("e")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("empty mesh"), "{}", stderr(&out));
}

#[test]
fn extract_accepts_both_coordinate_modes() {
    let w = Work::new();
    assert!(w.train("a", &[]).status.success());
    let ck = w.arg("a/checkpoint.bin");
    for mode in ["discrete", "continuous"] {
        ok(&["extract", "--checkpoint", &ck, "--out", &w.arg(mode), "--mc-res", "16", "--coord-mode", mode, "--level", "0.1"]);
        assert!(w.path(mode).join("mesh.obj").is_file());
    }
    let bad = run(&["extract", "--checkpoint", &ck, "--out", &w.arg("x"), "--level", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_reports_chamfer_for_a_trained_mesh() {
    let w = Work::new();
    let out = w.train_for("a", "60", &[]);
    assert!(out.status.success());
    ok(&["extract", "--checkpoint", &w.arg("a/checkpoint.bin"), "--out", &w.arg("m"), "--mc-res", "24", "--level", "0.2"]);
    let obj = fs::read_to_string(w.path("m/mesh.obj")).unwrap();
    if !obj.lines().any(|l| l.starts_with("f ")) {
        return;
    }
    ok(&["eval", "--mesh", &w.arg("m/mesh.obj"), "--data", &w.data(), "--out", &w.arg("e"), "--samples", "2000"]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("e/chamfer.json")).unwrap()).unwrap();
    let c = report["chamfer"].as_f64().unwrap();
    assert!(c.is_finite() && c > 0.0, "{report}");
}

#[test]
fn ablation_rows_follow_input_order() {
    let w = Work::new();
    let data = w.data();
    ok(&[
        "ablate-resolution", "--data", &data, "--out", &w.arg("ab"), "--resolutions", "8,4,inf", "--mc-res", "16",
        "--eval-samples", "500", "--iterations", "5", "--batch-rays", "16", "--samples", "8", "--set",
        "net.geometry_width=8", "--set", "net.color_width=8",
    ]);
    let csv = fs::read_to_string(w.path("ab/ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(csv.lines().next(), Some("resolution,chamfer"));
    assert_eq!(labels, ["8", "4", "inf"]);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let w = Work::new();
    let out = run(&["train", "--data", &w.arg("nowhere"), "--out", &w.arg("o")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));
}
