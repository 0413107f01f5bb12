use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scd_autograd::Tensor;
use scd_core::cli::AblationSummary;
use scd_core::datamodel::{decode_labels, read_png_rgb, ClassPalette, Image, ImagePair};
use scd_core::metrics::MetricsReport;
use scd_core::network::{predict_scd, Model};

const TINY: &str = r#"
[data]
root = "data"
train_split = "data/train.txt"
eval_split = "data/test.txt"
[model]
num_classes = 3
[model.encoder]
stage_channels = [8, 8, 16, 16, 32]
stage_blocks = [1, 1, 1, 1]
[model.decoder]
channels = [16, 16, 8]
[model.cbam]
reduction = 4
[model.interaction]
heads = 2
[trainer]
batch_size = 4
total_epochs = 2
"#;

fn scd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scd"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout_path(dir: &Path, out: &Output) -> PathBuf {
    dir.join(String::from_utf8_lossy(&out.stdout).trim())
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace(n: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = scd(
        dir.path(),
        &[
            "synth-gen",
            "--out",
            "data",
            "--n-samples",
            &n.to_string(),
            "--seed",
            "5",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    std::fs::write(dir.path().join("cfg.toml"), TINY).unwrap();
    dir
}

fn train(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--config", "cfg.toml"];
    args.extend_from_slice(extra);
    let out = scd(dir, &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    stdout_path(dir, &out)
}

#[test]
fn train_writes_every_artifact_and_is_repeatable() {
    let ws = workspace(6);
    let dir = ws.path();
    let a = train(dir, &["--seed", "3", "--trainer.total_epochs", "1"]);
    for f in [
        "config.toml",
        "runlog.jsonl",
        "best.ckpt",
        "final.ckpt",
        "metrics.json",
        "train.txt",
        "test.txt",
    ] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let resolved = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(resolved.contains("total_epochs = 1"));
    assert!(resolved.contains("seed = 3"));
    let b = train(dir, &["--seed", "3", "--trainer.total_epochs", "1"]);
    assert_ne!(a, b);
    assert_eq!(
        std::fs::read(a.join("runlog.jsonl")).unwrap(),
        std::fs::read(b.join("runlog.jsonl")).unwrap()
    );
    // the resolved config alone reproduces the run
    let c = {
        let out = scd(
            dir,
            &["train", "--config", a.join("config.toml").to_str().unwrap()],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        stdout_path(dir, &out)
    };
    assert_eq!(
        std::fs::read(a.join("runlog.jsonl")).unwrap(),
        std::fs::read(c.join("runlog.jsonl")).unwrap()
    );
}

#[test]
fn user_errors_exit_with_one_and_name_the_culprit() {
    let ws = workspace(2);
    let dir = ws.path();
    let out = scd(
        dir,
        &[
            "train",
            "--config",
            "cfg.toml",
            "--data.root",
            "missing_root",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing_root"), "{}", stderr(&out));

    let out = scd(
        dir,
        &["train", "--config", "cfg.toml", "--trainer.batchsize", "2"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("trainer.batchsize"),
        "{}",
        stderr(&out)
    );

    let out = scd(dir, &["train", "--config", "nope.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.toml"));

    let out = scd(
        dir,
        &["train", "--config", "cfg.toml", "--model.num_classes", "4"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));

    let out = scd(dir, &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_bypass_scores_one() {
    let ws = workspace(3);
    let dir = ws.path();
    let out = scd(dir, &["evaluate", "--root", "data", "--bypass-model"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: MetricsReport = serde_json::from_slice(
        &std::fs::read(stdout_path(dir, &out).join("metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        (report.oa, report.fscd, report.miou, report.sek),
        (1.0, 1.0, 1.0, 1.0)
    );
    assert_eq!(report.n_scenes, 3);
}

/// Straight-line SECOND formulas over a dumped `(K+1)²` matrix.
fn recompute(q: &[Vec<u64>]) -> (f64, f64, f64) {
    let n = q.len();
    let total: f64 = q.iter().flatten().map(|&v| v as f64).sum();
    let diag: f64 = (0..n).map(|i| q[i][i] as f64).sum();
    let oa = diag / total;
    let row0: f64 = q[0].iter().map(|&v| v as f64).sum();
    let col0: f64 = q.iter().map(|r| r[0] as f64).sum();
    let q00 = q[0][0] as f64;
    let iou_n = q00 / (row0 + col0 - q00);
    let iou_c = (diag - q00) / (total - q00);
    let miou = (iou_n + iou_c) / 2.0;
    let rest = total - q00;
    let po = (diag - q00) / rest;
    let mut pe = 0.0;
    for i in 0..n {
        let mut r: f64 = q[i].iter().map(|&v| v as f64).sum();
        let mut c: f64 = q.iter().map(|row| row[i] as f64).sum();
        if i == 0 {
            r -= q00;
            c -= q00;
        }
        pe += r * c;
    }
    pe /= rest * rest;
    let sek = (po - pe) / (1.0 - pe) * (iou_c - 1.0).exp();
    (oa, miou, sek)
}

#[test]
fn evaluate_checkpoint_report_is_consistent_and_checks_classes() {
    let ws = workspace(6);
    let dir = ws.path();
    let run = train(dir, &["--trainer.total_epochs", "1"]);
    let ckpt = run.join("best.ckpt");
    let out = scd(
        dir,
        &[
            "evaluate",
            "--root",
            "data",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--split",
            "data/test.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: MetricsReport = serde_json::from_slice(
        &std::fs::read(stdout_path(dir, &out).join("metrics.json")).unwrap(),
    )
    .unwrap();
    let (oa, miou, sek) = recompute(&report.confusion);
    assert!((oa - report.oa).abs() < 1e-9);
    assert!((miou - report.miou).abs() < 1e-9);
    assert!((sek - report.sek).abs() < 1e-9);
    let sc = report.scd_counts;
    let p = sc.tp as f64 / sc.pred_changed as f64;
    let r = sc.tp as f64 / sc.gt_changed as f64;
    if sc.tp > 0 {
        assert!((2.0 * p * r / (p + r) - report.fscd).abs() < 1e-9);
    }
    // training-time evaluation of the same checkpoint agrees
    let train_report: MetricsReport =
        serde_json::from_slice(&std::fs::read(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(train_report.confusion, report.confusion);

    std::fs::write(
        dir.join("p4.txt"),
        ClassPalette::generated(4).unwrap().to_text(),
    )
    .unwrap();
    let out = scd(
        dir,
        &[
            "evaluate",
            "--root",
            "data",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--palette",
            "p4.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));
}

#[test]
fn predict_outputs_decode_to_model_predictions() {
    let ws = workspace(4);
    let dir = ws.path();
    let run = train(dir, &["--trainer.total_epochs", "1"]);
    let ckpt = run.join("final.ckpt");
    let args = [
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--t1",
        "data/im1/00000.png",
        "--t2",
        "data/im2/00000.png",
    ];
    let first = stdout_path(dir, &scd(dir, &args));
    let second = stdout_path(dir, &scd(dir, &args));
    for f in ["label1.png", "label2.png", "change.png"] {
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    let palette = ClassPalette::load(&dir.join("data/palette.txt")).unwrap();
    let (model, _) = Model::load(&ckpt).unwrap();
    let img = |p: &str| {
        let (h, w, rgb) = read_png_rgb(&dir.join(p)).unwrap();
        Image::from_rgb8(h, w, &rgb).unwrap()
    };
    let pair = ImagePair::new(
        img("data/im1/00000.png"),
        img("data/im2/00000.png"),
        "00000",
    )
    .unwrap();
    let expect = predict_scd(&model.infer(&[&pair]).unwrap(), 0.5)
        .unwrap()
        .remove(0);
    for (f, map) in [("label1.png", &expect.l1), ("label2.png", &expect.l2)] {
        let (h, w, rgb) = read_png_rgb(&first.join(f)).unwrap();
        assert_eq!(decode_labels(h, w, &rgb, &palette).unwrap(), *map);
    }
    let (_, _, change) = read_png_rgb(&first.join("change.png")).unwrap();
    for (p, px) in change.chunks(3).enumerate() {
        let changed = expect.l1.data[p] != 0;
        assert_eq!(px, if changed { [255; 3] } else { [0; 3] });
    }
}

#[test]
fn predict_unchanged_everywhere_gives_background_maps() {
    let ws = workspace(2);
    let dir = ws.path();
    let run = train(dir, &["--trainer.total_epochs", "1"]);
    let (mut model, header) = Model::load(&run.join("final.ckpt")).unwrap();
    let bias = model.store.find("change_decoder.head.bias").unwrap();
    model.store.set(bias, Tensor::full(&[1], -1e3)).unwrap();
    let palette = ClassPalette::new(header.palette.unwrap()).unwrap();
    let ckpt = dir.join("never.ckpt");
    model
        .save(&ckpt, 0, Default::default(), Some(&palette))
        .unwrap();
    let out = scd(
        dir,
        &[
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--t1",
            "data/im1/00001.png",
            "--t2",
            "data/im2/00001.png",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let zero = palette.color(0).unwrap();
    for f in ["label1.png", "label2.png"] {
        let (_, _, rgb) = read_png_rgb(&stdout_path(dir, &out).join(f)).unwrap();
        assert!(rgb.chunks(3).all(|p| p == zero));
    }
}

#[test]
fn ablate_single_seed_leaves_std_empty_and_marks_failures() {
    let ws = workspace(4);
    let dir = ws.path();
    let plan = r#"
base = "cfg.toml"
seeds = [0]
[config.trainer]
total_epochs = 1
[[variant]]
name = "baseline"
overrides = { "model.cbam.enabled" = false, "loss.lambda1" = 0.0 }
[[variant]]
name = "broken"
overrides = { "data.root" = "no_such_data" }
"#;
    std::fs::write(dir.join("plan.toml"), plan).unwrap();
    let out = scd(dir, &["ablate", "--plan", "plan.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let run = stdout_path(dir, &out);
    let table = std::fs::read_to_string(run.join("summary.md")).unwrap();
    let baseline = table.lines().find(|l| l.starts_with("| baseline")).unwrap();
    assert_eq!(baseline.matches('±').count(), 4);
    assert!(
        baseline
            .split('|')
            .skip(2)
            .take(4)
            .all(|c| c.trim().ends_with('±')),
        "{baseline}"
    );
    assert!(table.contains("| broken | failed"), "{table}");
    let summary: AblationSummary =
        serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert!(summary.runs[1]
        .error
        .as_deref()
        .unwrap()
        .contains("no_such_data"));
    assert!(run.join("baseline/seed-0/metrics.json").is_file());
}
