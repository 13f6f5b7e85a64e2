use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn npvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npvp"))
        .args(args)
        .env_remove("NPVP_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_CONFIG: &str = r#"{
  "model": {"feature_dim": 16, "heads": 2, "fourier_features": 8,
            "encoder_blocks": 1, "decoder_blocks": 1},
  "train": {"batch_size": 2, "ae_batch_size": 4}
}"#;

struct Setup {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
    ae: PathBuf,
    predictor: PathBuf,
}

/// Data, an autoencoder and a predictor trained for a couple of steps.
fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    let o = npvp(&[
        "gen-data",
        "--clips",
        "5",
        "--len",
        "20",
        "--size",
        "32",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let config = root.join("c.json");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let runs = root.join("runs");
    let o = npvp(&[
        "train",
        "--stage",
        "ae",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--out",
        s(&runs),
        "--steps",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ae = runs.join("ae.ckpt");
    let o = npvp(&[
        "train",
        "--stage",
        "predictor",
        "--config",
        s(&config),
        "--data",
        s(&data),
        "--out",
        s(&runs),
        "--steps",
        "2",
        "--ae-ckpt",
        s(&ae),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let predictor = runs.join("predictor.ckpt");
    Setup {
        _dir: dir,
        root,
        data,
        config,
        ae,
        predictor,
    }
}

#[test]
fn gen_data_writes_manifest_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = npvp(&[
            "gen-data",
            "--clips",
            "3",
            "--len",
            "20",
            "--size",
            "32",
            "--seed",
            "0",
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0);
        assert!(String::from_utf8_lossy(&o.stdout).contains("manifest.json"));
    }
    assert!(a.join("manifest.json").exists());
    let frame = "clip_00002/frame_00013.png";
    assert_eq!(
        std::fs::read(a.join(frame)).unwrap(),
        std::fs::read(b.join(frame)).unwrap()
    );
}

#[test]
fn gen_data_without_out_is_usage_error() {
    let o = npvp(&["gen-data", "--clips", "3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr)
        .to_lowercase()
        .contains("usage"));
}

#[test]
fn out_defaults_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_npvp"))
        .args(["gen-data", "--clips", "2", "--len", "4", "--size", "16"])
        .env("NPVP_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn predictor_without_ae_checkpoint_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = npvp(&[
        "train",
        "--stage",
        "predictor",
        "--data",
        s(dir.path()),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn missing_ae_checkpoint_file_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(
        code(&npvp(&["gen-data", "--clips", "2", "--out", s(&data)])),
        0
    );
    let o = npvp(&[
        "train",
        "--stage",
        "predictor",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("r")),
        "--ae-ckpt",
        s(&dir.path().join("nope.ckpt")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn dry_run_validates_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = npvp(&[
        "train",
        "--stage",
        "ae",
        "--data",
        "x",
        "--out",
        s(&out),
        "--dry-run",
    ]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["train"]["stage"], "autoencoder");
    assert!(!out.exists());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"lr_min": 1.0}}"#).unwrap();
    let o = npvp(&[
        "train",
        "--stage",
        "ae",
        "--config",
        s(&bad),
        "--data",
        "x",
        "--out",
        s(&out),
        "--dry-run",
    ]);
    assert_eq!(code(&o), 2);
    std::fs::write(&bad, r#"{"trian": {}}"#).unwrap();
    let o = npvp(&[
        "train",
        "--stage",
        "ae",
        "--config",
        s(&bad),
        "--data",
        "x",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn train_predict_eval_round_trip() {
    let st = setup();
    assert!(st.ae.exists() && st.predictor.exists());
    let metrics = std::fs::read_to_string(st.root.join("runs/predictor_metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,lr,pixel_l1,feature_l1,kl,total"));
    assert_eq!(metrics.lines().count(), 3);

    // VFI 5+5 -> 10
    let out = st.root.join("pred_vfi");
    let o = npvp(&[
        "predict",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&st.data),
        "--task",
        "vfi",
        "--p",
        "5",
        "--f",
        "5",
        "--k",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let side: Value =
        serde_json::from_slice(&std::fs::read(out.join("prediction.json")).unwrap()).unwrap();
    assert_eq!(side["target_times"].as_array().unwrap().len(), 10);
    assert_eq!(side["mode"], "deterministic");
    assert!(out.join("sample_000.png").exists());
    assert_eq!(side["sample_scores"].as_array().unwrap().len(), 1);

    // custom real-valued times
    let out = st.root.join("pred_custom");
    let o = npvp(&[
        "predict",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&st.data),
        "--task",
        "custom",
        "--target-times",
        "4.25,4.5,8.5",
        "--samples",
        "2",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let side: Value =
        serde_json::from_slice(&std::fs::read(out.join("prediction.json")).unwrap()).unwrap();
    assert_eq!(side["target_times"], serde_json::json!([4.25, 4.5, 8.5]));
    assert_eq!(side["num_samples"], 2);
    assert!(side.get("sample_scores").is_none());
    let grid = image::open(out.join("sample_000.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (3 * 32 + 2, 32));

    // contradictory flags
    let o = npvp(&[
        "predict",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&st.data),
        "--samples",
        "3",
        "--deterministic",
        "--out",
        s(&st.root.join("never")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!st.root.join("never").exists());

    // eval: 5 clips, deterministic
    let out = st.root.join("eval");
    let o = npvp(&[
        "eval",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&st.data),
        "--deterministic",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("eval.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(&rows[5][0], "mean");
    let mean: f64 = rows[..5]
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .sum::<f64>()
        / 5.0;
    assert!((mean - rows[5][1].parse::<f64>().unwrap()).abs() < 1e-9);
    let frames = std::fs::read_to_string(out.join("frames.csv")).unwrap();
    assert!(frames.starts_with("clip_id,frame_time,psnr,ssim"));
    assert_eq!(frames.lines().count(), 1 + 5 * 10 + 1);

    // ranking by ssim
    let out = st.root.join("eval_ssim");
    let o = npvp(&[
        "eval",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&st.data),
        "--samples",
        "2",
        "--metric",
        "ssim",
        "--limit",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // same seed twice gives the same evaluation
    let out2 = st.root.join("eval_ssim2");
    npvp(&[
        "eval",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&st.data),
        "--samples",
        "2",
        "--metric",
        "ssim",
        "--limit",
        "2",
        "--out",
        s(&out2),
    ]);
    assert_eq!(
        std::fs::read(out.join("eval.csv")).unwrap(),
        std::fs::read(out2.join("eval.csv")).unwrap()
    );
}

#[test]
fn geometry_and_empty_set_failures() {
    let st = setup();
    // frames of the wrong size
    let big = st.root.join("big");
    assert_eq!(
        code(&npvp(&[
            "gen-data",
            "--clips",
            "1",
            "--size",
            "64",
            "--out",
            s(&big)
        ])),
        0
    );
    let o = npvp(&[
        "predict",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&big),
        "--out",
        s(&st.root.join("p")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("image_size"));

    // clips too short for VFI 5+5 -> 10
    let short = st.root.join("short");
    assert_eq!(
        code(&npvp(&[
            "gen-data",
            "--clips",
            "2",
            "--len",
            "8",
            "--out",
            s(&short)
        ])),
        0
    );
    let o = npvp(&[
        "eval",
        "--ckpt",
        s(&st.predictor),
        "--data",
        s(&short),
        "--out",
        s(&st.root.join("e")),
    ]);
    assert_eq!(code(&o), 1);

    // resuming continues the step counter
    let o = npvp(&[
        "train",
        "--stage",
        "predictor",
        "--config",
        s(&st.config),
        "--data",
        s(&st.data),
        "--out",
        s(&st.root.join("resumed")),
        "--steps",
        "3",
        "--resume",
        s(&st.predictor),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = std::fs::read_to_string(st.root.join("resumed/predictor_metrics.csv")).unwrap();
    assert_eq!(m.lines().count(), 2);
    assert!(m.lines().nth(1).unwrap().starts_with("2,"));
    let _ = &st.ae;
}
