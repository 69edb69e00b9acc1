use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bseg"))
        .args(args)
        .output()
        .expect("bseg runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, count: usize, size: usize, seed: u64) -> PathBuf {
    let out = bseg(&[
        "generate",
        "--count",
        &count.to_string(),
        "--size",
        &size.to_string(),
        "--out",
        s(dir),
        "--seed",
        &seed.to_string(),
    ]);
    let report = stdout_json(&out);
    assert_eq!(report["schema"], "bseg-generate/1");
    PathBuf::from(report["manifest"].as_str().unwrap())
}

/// A one-epoch model on a handful of small scenes.
fn tiny_model(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = generate(&dir.join("data"), 6, 64, 3);
    let ckpt = dir.join("model.bseg");
    let out = bseg(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&ckpt),
        "--epochs",
        "1",
        "--epochs2",
        "0",
        "--size",
        "64",
        "--batch-size",
        "2",
        "--no-augment",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    (manifest, ckpt)
}

#[test]
fn generate_writes_images_masks_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path(), 10, 64, 1);
    let files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(files.iter().filter(|f| f.ends_with("_mask.pgm")).count(), 10);
    assert_eq!(files.iter().filter(|f| f.ends_with(".pgm")).count(), 20);
    let text = fs::read_to_string(&manifest).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // header plus one record per scene
    assert_eq!(lines.len(), 11);
    let header: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["classes"][0], "EAN13");
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(a.path(), 4, 64, 9);
    generate(b.path(), 4, 64, 9);
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let (x, y) = (fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn generate_zero_and_unwritable() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path(), 0, 64, 0);
    assert_eq!(fs::read_to_string(manifest).unwrap().lines().count(), 1);

    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = bseg(&["generate", "--count", "1", "--out", s(&blocker.join("sub"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("file"), "{}", stderr(&out));
}

#[test]
fn generate_rejects_unknown_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = bseg(&["generate", "--count", "1", "--out", s(dir.path()), "--classes", "qr"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_detect_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = tiny_model(dir.path());

    let side: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("model.bseg.json")).unwrap()).unwrap();
    assert_eq!(side["schema"], "bseg-checkpoint/1");
    assert_eq!(side["history"]["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(side["classes"][3], "Stacked2D");

    let report = stdout_json(&bseg(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&manifest)]));
    assert_eq!(report["schema"], "bseg-eval/1");
    let curve = report["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 9);
    for pair in curve.windows(2) {
        for key in ["detection_rate", "recall", "precision"] {
            assert!(pair[1][key].as_f64().unwrap() <= pair[0][key].as_f64().unwrap());
        }
    }
    assert_eq!(report["images"], 6);

    let out_file = dir.path().join("eval.json");
    let out = bseg(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--thresholds",
        "0.5",
        "--match",
        "one-to-one",
        "--out",
        s(&out_file),
    ]);
    assert!(out.status.success());
    let written: Value = serde_json::from_str(&fs::read_to_string(out_file).unwrap()).unwrap();
    assert_eq!(written["curve"].as_array().unwrap().len(), 1);
    assert_eq!(written["match_mode"], "one_to_one");

    let overlays = dir.path().join("overlays");
    let images: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("data/scene_{i:05}.pgm"))).collect();
    let report = stdout_json(&bseg(&[
        "detect",
        "--checkpoint",
        s(&ckpt),
        "--overlay",
        s(&overlays),
        s(&images[0]),
        s(&images[1]),
    ]));
    assert_eq!(report["schema"], "bseg-detections/1");
    assert_eq!(report["model"]["classes"][0], "EAN13");
    assert_eq!(report["images"].as_array().unwrap().len(), 2);
    for i in 0..2 {
        assert!(overlays.join(format!("scene_{i:05}.overlay.png")).exists());
    }
}

#[test]
fn resume_extends_history() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, ckpt) = tiny_model(dir.path());
    let out = bseg(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&ckpt),
        "--epochs",
        "1",
        "--epochs2",
        "1",
        "--size",
        "64",
        "--batch-size",
        "2",
        "--no-augment",
        "--resume",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 1);
    assert!(stdout.contains("epoch 2/2 phase 2"));
}

#[test]
fn train_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(&dir.path().join("data"), 2, 64, 0);
    fs::remove_file(dir.path().join("data/scene_00001_mask.pgm")).unwrap();
    let ckpt = dir.path().join("m.bseg");
    let out = bseg(&["train", "--manifest", s(&manifest), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("scene_00001_mask.pgm"), "{}", stderr(&out));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"image\": \"a.pgm\", \"mask\": \"a_mask.pgm\"}\n{\"image\": 3}\n").unwrap();
    let out = bseg(&["train", "--manifest", s(&bad), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let config = dir.path().join("config.json");
    fs::write(&config, "{\"batch_size\": 0}").unwrap();
    let good = generate(&dir.path().join("ok"), 2, 64, 0);
    let out = bseg(&["train", "--manifest", s(&good), "--out", s(&ckpt), "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("batch_size"));
}

#[test]
fn eval_rejects_empty_manifest_and_class_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = tiny_model(dir.path());
    let empty = generate(&dir.path().join("empty"), 0, 64, 0);
    let out = bseg(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));

    // a single-class manifest against a four-class checkpoint
    let data = dir.path().join("data");
    let one = dir.path().join("one.jsonl");
    fs::write(
        &one,
        format!(
            "{{\"schema\": \"bseg-manifest/1\", \"classes\": [\"barcode\"]}}\n{{\"image\": \"{}\", \"mask\": \"{}\"}}\n",
            data.join("scene_00000.pgm").display(),
            dir.path().join("blank_mask.pgm").display()
        ),
    )
    .unwrap();
    let blank = image::GrayImage::new(64, 64);
    blank.save(dir.path().join("blank_mask.pgm")).unwrap();
    let out = bseg(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&one)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n_classes"), "{}", stderr(&out));
}

#[test]
fn detect_skips_unreadable_images() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = tiny_model(dir.path());
    let blank = dir.path().join("blank.png");
    image::GrayImage::from_pixel(50, 38, image::Luma([200])).save(&blank).unwrap();
    let missing = dir.path().join("missing.png");
    let report = stdout_json(&bseg(&["detect", "--checkpoint", s(&ckpt), s(&blank), s(&missing)]));
    let images = report["images"].as_array().unwrap();
    assert_eq!(images.len(), 1);
    assert_eq!(images[0]["width"], 50);
    assert!(images[0]["detections"].is_array());
    assert_eq!(report["failed"][0]["path"], s(&missing));

    let out = bseg(&["detect", "--checkpoint", s(&ckpt), s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let out = bseg(&["detect", "--checkpoint", s(&missing), s(&blank)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_reports_statistics() {
    let out = bseg(&["bench", "--size", "64", "--iterations", "30", "--warmup", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("64x64"));
    for key in ["mean", "median", "p95"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "{text}");
    }

    let timed = |size: &str| {
        let r = stdout_json(&bseg(&["bench", "--size", size, "--iterations", "30", "--json"]));
        assert_eq!(r["schema"], "bseg-bench/1");
        assert_eq!(r["iterations"], 30);
        r["mean_ms"].as_f64().unwrap()
    };
    assert!(timed("128") < timed("256"));

    let out = bseg(&["bench", "--size", "30"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bseg(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bseg(&["eval", "--manifest", "x"]).status.code(), Some(2));
    assert_eq!(bseg(&["--threads", "0", "bench"]).status.code(), Some(2));
}
