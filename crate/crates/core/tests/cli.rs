use std::path::Path;
use std::process::{Command, Output};

use ct_classify::dataset::{load_manifest, Split, CLASS_NAMES};
use ct_classify::imaging::GrayImage;

fn ct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ct-classify"))
        .args(args)
        .env_remove("CT_CLASSIFY_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small raw dataset in the distribution's directory layout, JPEG and PNG mixed.
fn raw_dataset(root: &Path, per_class: usize) {
    let dirs = ["Benign cases", "Malignant cases", "Normal cases"];
    for (label, dir) in dirs.iter().enumerate() {
        for i in 0..per_class {
            let base = 50 + 70 * label;
            let img =
                GrayImage::from_fn(48, 40, |r, c| (base + (r * 7 + c * 11 + i * 13) % 40) as u8)
                    .unwrap();
            let name = root.join(dir).join(format!("case{i}.png"));
            img.save_png(&name).unwrap();
            if i == 0 {
                let rgb = image::RgbImage::from_fn(40, 48, |x, y| {
                    let v = img.get(y as usize, x as usize);
                    image::Rgb([v, v, v])
                });
                rgb.save(root.join(dir).join("extra.jpg")).unwrap();
            }
        }
    }
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, clean, run) = (
        dir.path().join("raw"),
        dir.path().join("clean"),
        dir.path().join("run"),
    );
    raw_dataset(&raw, 6);

    let o = ct(&[
        "--seed",
        "3",
        "preprocess",
        "--input",
        p(&raw),
        "--output",
        p(&clean),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = load_manifest(clean.join("manifest.csv")).unwrap();
    assert_eq!(m.class_counts(), vec![7, 7, 7]);
    let first = ct_classify::imaging::load_grayscale(clean.join(&m.records()[0].path)).unwrap();
    assert_eq!((first.height(), first.width()), (224, 224));

    let o = ct(&["--seed", "3", "split", "--data", p(&clean)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = load_manifest(clean.join("manifest.csv")).unwrap();
    // 7 per class: 4.9 / 1.05 / 1.05 gives 5 / 1 / 1
    assert_eq!(m.with_split(Split::Train).class_counts(), vec![5, 5, 5]);
    assert_eq!(m.with_split(Split::Val).len(), 3);

    let o = ct(&[
        "--seed",
        "3",
        "augment",
        "--data",
        p(&clean),
        "--targets",
        "6,7,8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = load_manifest(clean.join("manifest.csv")).unwrap();
    assert_eq!(m.with_split(Split::Train).class_counts(), vec![6, 7, 8]);
    assert_eq!(m.with_split(Split::Test).len(), 3);
    assert!(m.records().iter().any(|r| r.path.contains("_aug0.png")));

    let o = ct(&[
        "--seed",
        "3",
        "train",
        "--data",
        p(&clean),
        "--out",
        p(&run),
        "--epochs",
        "10",
        "--batch-size",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 11);
    assert_eq!(
        curves.lines().next().unwrap(),
        "epoch,train_loss,train_acc,val_loss,val_acc"
    );

    let ckpt = run.join("model.ckpt");
    let report_csv = dir.path().join("report.csv");
    let o = ct(&[
        "evaluate",
        "--data",
        p(&clean),
        "--checkpoint",
        p(&ckpt),
        "--split",
        "test",
        "--csv",
        p(&report_csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    for needle in [
        "Benign (0)",
        "Malignant (1)",
        "Normal (2)",
        "Accuracy",
        "Macro Average",
        "Weighted Average",
    ] {
        assert!(report.contains(needle), "{report}");
    }
    assert!(std::fs::read_to_string(&report_csv)
        .unwrap()
        .starts_with("class,precision,"));

    let image = clean.join(&m.records()[0].path);
    let o = ct(&["predict", "--checkpoint", p(&ckpt), "--image", p(&image)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    let mut parts = line.split_whitespace();
    assert!(CLASS_NAMES.contains(&parts.next().unwrap()));
    let probs: Vec<f64> = parts
        .map(|kv| kv.split('=').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    // a raw image needs --raw to reach the model's input size
    let raw_image = raw.join("Normal cases/case1.png");
    assert_eq!(
        ct(&[
            "predict",
            "--checkpoint",
            p(&ckpt),
            "--image",
            p(&raw_image)
        ])
        .status
        .code(),
        Some(1)
    );
    let o = ct(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--image",
        p(&raw_image),
        "--raw",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    raw_dataset(&raw, 4);
    let mut artefacts = vec![];
    for k in 0..2 {
        let clean = dir.path().join(format!("clean{k}"));
        let run = dir.path().join(format!("run{k}"));
        assert!(ct(&[
            "--seed",
            "5",
            "preprocess",
            "--input",
            p(&raw),
            "--output",
            p(&clean)
        ])
        .status
        .success());
        assert!(ct(&["--seed", "5", "split", "--data", p(&clean)])
            .status
            .success());
        let o = ct(&[
            "--seed",
            "5",
            "train",
            "--data",
            p(&clean),
            "--out",
            p(&run),
            "--epochs",
            "2",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let m = std::fs::read(clean.join("manifest.csv")).unwrap();
        let png = std::fs::read(clean.join("Benign cases/case2.png")).unwrap();
        let ckpt = std::fs::read(run.join("model.ckpt")).unwrap();
        let curves = std::fs::read(run.join("curves.csv")).unwrap();
        artefacts.push((m, png, ckpt, curves));
    }
    assert!(artefacts[0] == artefacts[1]);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    raw_dataset(&raw, 4);
    let clean = dir.path().join("clean");
    assert!(
        ct(&["preprocess", "--input", p(&raw), "--output", p(&clean)])
            .status
            .success()
    );
    let split_with = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ct-classify"));
        cmd.env_remove("CT_CLASSIFY_SEED");
        if let Some(s) = env {
            cmd.env("CT_CLASSIFY_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd
            .args(["split", "--data", p(&clean)])
            .status()
            .unwrap()
            .success());
        std::fs::read(clean.join("manifest.csv")).unwrap()
    };
    let by_flag = split_with(None, Some("11"));
    assert_eq!(split_with(Some("11"), None), by_flag);
    assert_eq!(split_with(Some("99"), Some("11")), by_flag);
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    raw_dataset(&raw, 3);
    let clean = dir.path().join("clean");
    assert!(
        ct(&["preprocess", "--input", p(&raw), "--output", p(&clean)])
            .status
            .success()
    );

    let missing = dir.path().join("nowhere/model.ckpt");
    let o = ct(&["evaluate", "--data", p(&clean), "--checkpoint", p(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains(p(&missing)), "{err}");

    // training before splitting
    let o = ct(&[
        "train",
        "--data",
        p(&clean),
        "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("split"));

    let o = ct(&[
        "preprocess",
        "--input",
        p(&dir.path().join("absent")),
        "--output",
        p(&clean),
    ]);
    assert_eq!(o.status.code(), Some(1));

    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "[imaging]\nclip = 2.0\n").unwrap();
    let o = ct(&[
        "--config",
        p(&bad_config),
        "preprocess",
        "--input",
        p(&raw),
        "--output",
        p(&clean),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("clip"));
}

#[test]
fn usage_and_help() {
    assert_eq!(ct(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        ct(&["split", "--data", "x", "--nope"]).status.code(),
        Some(2)
    );
    assert_eq!(ct(&[]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    for verb in [
        "preprocess",
        "split",
        "augment",
        "train",
        "evaluate",
        "predict",
    ] {
        let o = Command::new(env!("CARGO_BIN_EXE_ct-classify"))
            .args([verb, "--help"])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains("Usage"));
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}
