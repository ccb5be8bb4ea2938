use std::path::Path;
use std::process::{Command, Output};

use fdgan::eval::EmbeddingMatcher;
use fdgan::net::{Checkpoint, NetConfig};
use fdgan::synth::{render_synthetic_face, SyntheticIdentity};
use fdgan::train::{TrainConfig, Trainer};
use fdgan::RasterImage;

fn fdgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdgan")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const DATASET_TOML: &str = r#"
seed = 3
image_size = 16
identities = 6
morphs_per_identity = 2
matcher_identities = 4
matcher_variations = 3
calibration_identities = 3
calibration_variations = 3
[split]
train = 3
dev = 1
test = 2
"#;

const TRAIN_TOML: &str = "image_size = 16\nwidth_div = 16\nbatch_size = 2\nsteps = 3\nlr = 1e-3\n";

const MATCHER_TOML: &str = "input_size = 16\nwidth_div = 16\nsteps = 5\nbatch_size = 8\n";

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(fdgan(&[]).status.code(), Some(2));
    assert_eq!(fdgan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(fdgan(&["train", "--dataset", "x"]).status.code(), Some(2));
    assert_eq!(fdgan(&["morph", "--out", "x", "--alpha", "half"]).status.code(), Some(2));
}

#[test]
fn module_errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = fdgan(&["train", "--dataset", p(&dir.path().join("missing")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn morph_with_zero_factors_returns_the_first_face() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (k, seed) in [(1, 5u64), (2, 6)] {
        let (img, lm) = render_synthetic_face(&SyntheticIdentity::from_seed(seed), 0).unwrap();
        img.save_png(d.join(format!("f{k}.png"))).unwrap();
        lm.save_json(d.join(format!("f{k}.json"))).unwrap();
    }
    let out = fdgan(&[
        "morph", "--out", p(&d.join("m.png")),
        "--image1", p(&d.join("f1.png")), "--landmarks1", p(&d.join("f1.json")),
        "--image2", p(&d.join("f2.png")), "--landmarks2", p(&d.join("f2.json")),
        "--alpha", "0", "--beta", "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = RasterImage::load_png(d.join("f1.png")).unwrap();
    let morphed = RasterImage::load_png(d.join("m.png")).unwrap();
    assert_eq!(first.to_rgb8(), morphed.to_rgb8());

    let half = fdgan(&[
        "morph", "--out", p(&d.join("h.png")),
        "--image1", p(&d.join("f1.png")), "--landmarks1", p(&d.join("f1.json")),
        "--image2", p(&d.join("f2.png")), "--landmarks2", p(&d.join("f2.json")),
    ]);
    assert!(half.status.success());
    assert_ne!(RasterImage::load_png(d.join("h.png")).unwrap().to_rgb8(), first.to_rgb8());
}

#[test]
fn zero_step_training_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("data.toml"), DATASET_TOML).unwrap();
    std::fs::write(d.join("train.toml"), TRAIN_TOML).unwrap();
    assert!(fdgan(&["dataset", "--config", p(&d.join("data.toml")), "--out", p(&d.join("ds"))]).status.success());
    let out = fdgan(&[
        "train", "--config", p(&d.join("train.toml")), "--dataset", p(&d.join("ds")),
        "--steps", "0", "--seed", "9", "--out", p(&d.join("run")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = Checkpoint::load(d.join("run/checkpoint.ckpt")).unwrap();
    let mut cfg = TrainConfig::from_toml_str(TRAIN_TOML).unwrap();
    cfg.seed = 9;
    let fresh = Trainer::new(cfg).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(&ck.store, fresh.store());
}

#[test]
fn eval_on_an_empty_split_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let toml = DATASET_TOML.replace("dev = 1\ntest = 2", "dev = 3\ntest = 0");
    std::fs::write(d.join("data.toml"), toml).unwrap();
    std::fs::write(d.join("train.toml"), TRAIN_TOML).unwrap();
    assert!(fdgan(&["dataset", "--config", p(&d.join("data.toml")), "--out", p(&d.join("ds"))]).status.success());
    let train = fdgan(&[
        "train", "--config", p(&d.join("train.toml")), "--dataset", p(&d.join("ds")),
        "--steps", "0", "--out", p(&d.join("run")),
    ]);
    assert!(train.status.success());
    EmbeddingMatcher::initialized(NetConfig::new(16, 16).unwrap(), 0).unwrap().save(d.join("m.ckpt")).unwrap();
    let out = fdgan(&[
        "eval", "--checkpoint", p(&d.join("run/checkpoint.ckpt")), "--dataset", p(&d.join("ds")),
        "--matcher", p(&d.join("m.ckpt")), "--out", p(&d.join("report.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient data"));
}

#[test]
fn dataset_train_and_eval_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("data.toml"), DATASET_TOML).unwrap();
    std::fs::write(d.join("train.toml"), TRAIN_TOML).unwrap();
    std::fs::write(d.join("matcher.toml"), MATCHER_TOML).unwrap();
    let ok = |args: &[&str]| {
        let out = fdgan(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["dataset", "--config", p(&d.join("data.toml")), "--out", p(&d.join("ds"))]);
    ok(&["matcher", "--config", p(&d.join("matcher.toml")), "--dataset", p(&d.join("ds")), "--far", "0.05", "--out", p(&d.join("m.ckpt"))]);
    for run in ["run1", "run2"] {
        ok(&["train", "--config", p(&d.join("train.toml")), "--dataset", p(&d.join("ds")), "--seed", "4", "--out", p(&d.join(run))]);
    }
    let log1 = std::fs::read_to_string(d.join("run1/losses.log")).unwrap();
    assert_eq!(log1, std::fs::read_to_string(d.join("run2/losses.log")).unwrap());
    assert_eq!(log1.lines().count(), 4);

    for out in ["r1.json", "r2.json"] {
        ok(&[
            "eval", "--checkpoint", p(&d.join("run1/checkpoint.ckpt")), "--dataset", p(&d.join("ds")),
            "--matcher", p(&d.join("m.ckpt")), "--out", p(&d.join(out)),
        ]);
    }
    let report = std::fs::read_to_string(d.join("r1.json")).unwrap();
    assert_eq!(report, std::fs::read_to_string(d.join("r2.json")).unwrap());
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    let total = json["T"].as_u64().unwrap();
    assert!(total > 0 && json["N"].as_u64().unwrap() <= total);
    assert_eq!(json["items"].as_array().unwrap().len() as u64, total);

    let ds = fdgan::dataset::Dataset::load(d.join("ds")).unwrap();
    let t = &ds.splits.test.triplets[0];
    t.criminal.save_png(d.join("aux.png")).unwrap();
    t.morphed.save_png(d.join("morphed.png")).unwrap();
    ok(&[
        "demorph", "--checkpoint", p(&d.join("run1/checkpoint.ckpt")), "--aux", p(&d.join("aux.png")),
        "--morphed", p(&d.join("morphed.png")), "--out", p(&d.join("restored.png")),
    ]);
    let restored = RasterImage::load_png(d.join("restored.png")).unwrap();
    assert_eq!((restored.height(), restored.width()), (16, 16));
}
