use std::path::{Path, PathBuf};

use crate::datamodel::{
    encode_labels, list_scene_ids, make_split, read_png_rgb, read_split_file, synth_generate,
    write_png_rgb, write_split, ClassPalette, DatasetSplit, Image, ImagePair, SemanticLabelPair,
    SynthConfig,
};
use crate::metrics::MetricsReport;
use crate::network::{predict_scd, Model};
use crate::trainer::{
    evaluate, fit, DiskDataset, FitOutput, GroundTruthPredictor, ModelPredictor, RunLog,
};
use crate::{Error, Result};

use super::config::RunConfig;

/// Creates `base/<prefix>-<local time>`, adding a numeric suffix on clashes.
pub fn make_run_dir(base: &Path, prefix: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let stem = format!("{prefix}-{stamp}");
    let mut dir = base.join(&stem);
    let mut n = 1;
    loop {
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = base.join(format!("{stem}-{n}"));
                n += 1;
            }
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn load_palette(root: &Path, path: &Path) -> Result<ClassPalette> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    ClassPalette::load(path)
}

fn check_classes(model_k: usize, palette: &ClassPalette, what: &str) -> Result<()> {
    if palette.num_classes() != model_k {
        return Err(Error::ConfigMismatch(format!(
            "{what} has {model_k} classes but the palette has {}",
            palette.num_classes()
        )));
    }
    Ok(())
}

pub struct TrainOutcome {
    pub log: RunLog,
    /// Best checkpoint scored on the evaluation split.
    pub report: MetricsReport,
}

/// Trains per `cfg` into `run_dir`: resolved config, split lists, run log,
/// `best.ckpt`, `final.ckpt` and `metrics.json`.
pub fn train(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = &cfg.data;
    let palette = load_palette(&data.root, &data.palette_path())?;
    check_classes(cfg.model.num_classes, &palette, "model.num_classes")?;
    let (train_ids, eval_ids) = match (&data.train_split, &data.eval_split) {
        (Some(t), Some(e)) => (read_split_file(t)?, read_split_file(e)?),
        (t, e) => {
            let split = make_split(
                &list_scene_ids(&data.root)?,
                data.test_fraction,
                data.split_seed,
            )?;
            let train = match t {
                Some(p) => read_split_file(p)?,
                None => split.train_ids,
            };
            let eval = match e {
                Some(p) => read_split_file(p)?,
                None => split.test_ids,
            };
            (train, eval)
        }
    };
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_text(&run_dir.join("config.toml"), &cfg.to_toml())?;
    write_split(
        run_dir,
        &DatasetSplit {
            train_ids: train_ids.clone(),
            test_ids: eval_ids.clone(),
            seed: data.split_seed,
        },
    )?;
    let train_set = DiskDataset {
        root: data.root.clone(),
        ids: train_ids,
        palette: palette.clone(),
    };
    let eval_set = DiskDataset {
        root: data.root.clone(),
        ids: eval_ids,
        palette: palette.clone(),
    };
    let mut model = Model::new(cfg.model.clone())?;
    let output = FitOutput {
        dir: run_dir,
        palette: Some(&palette),
    };
    let log = fit(
        &mut model,
        &train_set,
        &eval_set,
        &cfg.trainer,
        &cfg.loss,
        Some(output),
        None,
    )?;
    let (best, _) = Model::load(&run_dir.join("best.ckpt"))?;
    let predictor = ModelPredictor {
        model: &best,
        threshold: cfg.trainer.threshold,
    };
    let report = evaluate(
        &predictor,
        &eval_set,
        cfg.trainer.batch_size,
        vec![cfg.trainer.seed],
    )?;
    write_json(&run_dir.join("metrics.json"), &report)?;
    Ok(TrainOutcome { log, report })
}

pub struct EvaluateArgs {
    /// Required unless `bypass_model` is set.
    pub checkpoint: Option<PathBuf>,
    pub root: PathBuf,
    /// Scene ids to score; every scene under the root when absent.
    pub split: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    /// Score the ground truth against itself.
    pub bypass_model: bool,
    pub batch_size: usize,
    pub threshold: f64,
    pub seeds: Vec<u64>,
}

/// Scores a checkpoint on a dataset and writes `metrics.json` into `run_dir`.
pub fn evaluate_cmd(args: &EvaluateArgs, run_dir: &Path) -> Result<MetricsReport> {
    let palette_path = args
        .palette
        .clone()
        .unwrap_or_else(|| args.root.join("palette.txt"));
    let palette = load_palette(&args.root, &palette_path)?;
    let ids = match &args.split {
        Some(p) => read_split_file(p)?,
        None => list_scene_ids(&args.root)?,
    };
    let data = DiskDataset {
        root: args.root.clone(),
        ids,
        palette,
    };
    let report = if args.bypass_model {
        evaluate(
            &GroundTruthPredictor,
            &data,
            args.batch_size,
            args.seeds.clone(),
        )?
    } else {
        let path = args.checkpoint.as_ref().ok_or_else(|| {
            Error::InvalidConfig("evaluate needs a checkpoint unless the model is bypassed".into())
        })?;
        let (model, header) = Model::load(path)?;
        check_classes(model.config.num_classes, &data.palette, "checkpoint")?;
        let seeds = if args.seeds.is_empty() {
            vec![header.model_config.seed]
        } else {
            args.seeds.clone()
        };
        let predictor = ModelPredictor {
            model: &model,
            threshold: args.threshold,
        };
        evaluate(&predictor, &data, args.batch_size, seeds)?
    };
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_json(&run_dir.join("metrics.json"), &report)?;
    Ok(report)
}

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub t1: PathBuf,
    pub t2: PathBuf,
    /// Falls back to the checkpoint's palette, then a generated one.
    pub palette: Option<PathBuf>,
    pub threshold: f64,
}

fn read_image(path: &Path) -> Result<Image> {
    let (h, w, rgb) = read_png_rgb(path)?;
    Image::from_rgb8(h, w, &rgb)
}

/// Writes `label1.png`, `label2.png` (palette colors) and `change.png`
/// (white where changed) into `out_dir`.
pub fn predict_cmd(args: &PredictArgs, out_dir: &Path) -> Result<SemanticLabelPair> {
    let (model, header) = Model::load(&args.checkpoint)?;
    let palette = match (&args.palette, header.palette) {
        (Some(p), _) => ClassPalette::load(p)?,
        (None, Some(entries)) => ClassPalette::new(entries)?,
        (None, None) => ClassPalette::generated(model.config.num_classes)?,
    };
    check_classes(model.config.num_classes, &palette, "checkpoint")?;
    let stem = args
        .t1
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene");
    let pair = ImagePair::new(read_image(&args.t1)?, read_image(&args.t2)?, stem)?;
    let out = model.infer(&[&pair])?;
    let pred = predict_scd(&out, args.threshold)?.remove(0);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (h, w) = (pred.height(), pred.width());
    write_png_rgb(
        &out_dir.join("label1.png"),
        h,
        w,
        &encode_labels(&pred.l1, &palette)?,
    )?;
    write_png_rgb(
        &out_dir.join("label2.png"),
        h,
        w,
        &encode_labels(&pred.l2, &palette)?,
    )?;
    let change: Vec<u8> = pred
        .l1
        .data
        .iter()
        .zip(&pred.l2.data)
        .flat_map(|(&a, &b)| if a != 0 || b != 0 { [255; 3] } else { [0; 3] })
        .collect();
    write_png_rgb(&out_dir.join("change.png"), h, w, &change)?;
    Ok(pred)
}

/// Writes a synthetic dataset plus a seeded `train.txt` / `test.txt` split.
pub fn synth_cmd(
    cfg: &SynthConfig,
    seed: u64,
    test_fraction: f64,
    root: &Path,
) -> Result<DatasetSplit> {
    synth_generate(cfg, seed, root)?;
    let split = make_split(&list_scene_ids(root)?, test_fraction, seed)?;
    write_split(root, &split)?;
    Ok(split)
}
