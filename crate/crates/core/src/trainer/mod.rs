//! Optimisation loop: seeded batching and augmentation, Nesterov SGD under a
//! polynomial learning-rate schedule, periodic evaluation, best-model
//! selection, checkpoints and a line-delimited run log.

mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, Var};
use serde::{Deserialize, Serialize};

pub use optim::{clip_grad_norm, PolySchedule, Sgd};

use crate::datamodel::{
    augment_with, load_sample, ClassPalette, Dihedral, Sample, SemanticLabelPair,
};
use crate::losses::{compute_losses, LossBreakdown, LossWeights, Targets};
use crate::metrics::{
    accumulate, ConfusionMatrix, MetricSummary, MetricsReport, ScdCounts, SelectionMetric,
};
use crate::network::{batch_images, predict_scd, Model, DEFAULT_THRESHOLD};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub poly_power: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Seeds batch order and augmentation.
    pub seed: u64,
    pub eval_every: usize,
    pub selection_metric: SelectionMetric,
    /// Global gradient-norm cap; off when absent.
    pub max_grad_norm: Option<f64>,
    /// Random dihedral transforms on training samples.
    pub augment: bool,
    /// Change probability at or above which a pixel is labelled changed.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            total_epochs: 50,
            poly_power: 1.5,
            batch_size: 6,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 1e-4,
            seed: 0,
            eval_every: 1,
            selection_metric: SelectionMetric::Fscd,
            max_grad_norm: None,
            augment: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!(
                "trainer.base_lr must be positive, got {}",
                self.base_lr
            ));
        }
        if self.total_epochs == 0 {
            return bad("trainer.total_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("trainer.batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("trainer.eval_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "trainer.momentum must be in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "trainer.weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return bad(format!("trainer.max_grad_norm must be positive, got {m}"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!(
                "trainer.threshold must be in (0, 1), got {}",
                self.threshold
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> PolySchedule {
        PolySchedule {
            base_lr: self.base_lr,
            total_epochs: self.total_epochs,
            power: self.poly_power,
        }
    }
}

/// Indexed access to samples, in memory or on disk.
pub trait Dataset {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Sample>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

impl Dataset for Vec<Sample> {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

/// Scenes of a dataset root, loaded on demand.
pub struct DiskDataset {
    pub root: PathBuf,
    pub ids: Vec<String>,
    pub palette: ClassPalette,
}

impl Dataset for DiskDataset {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        load_sample(&self.root, &self.ids[index], &self.palette)
    }
}

/// One optimisation step on `batch`; returns the loss breakdown before the
/// update. Batch-norm running statistics are refreshed afterwards.
pub fn train_step(
    model: &mut Model,
    opt: &mut Sgd,
    batch: &[Sample],
    lr: f64,
    weights: &LossWeights,
    max_grad_norm: Option<f64>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs: Vec<_> = batch.iter().map(|s| &s.images).collect();
    let labels: Vec<_> = batch.iter().map(|s| &s.labels).collect();
    let (t1, t2) = batch_images(&pairs, model.config.normalization.as_ref())?;
    let targets = Targets::from_labels(&labels)?;
    let (mut grads, updates, breakdown) = {
        let b = Binding::new(&model.store, true);
        let out = model.forward(&Var::constant(t1), &Var::constant(t2), &b)?;
        let (total, breakdown) = compute_losses(&out.y1, &out.y2, &out.yc, &targets, weights)?;
        let g = total.backward();
        (b.param_grads(&g), b.take_updates(), breakdown)
    };
    if let Some(max) = max_grad_norm {
        clip_grad_norm(&mut grads, max);
    }
    if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFiniteLoss(format!(
            "gradient of {} is not finite",
            model.store.param(*id).name
        )));
    }
    opt.step(&mut model.store, grads, lr)?;
    for (id, value) in updates {
        model.store.set(id, value)?;
    }
    Ok(breakdown)
}

/// Produces label predictions for a batch of samples.
pub trait Predictor {
    fn predict(&self, batch: &[Sample]) -> Result<Vec<SemanticLabelPair>>;
}

/// Thresholded network predictions.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub threshold: f64,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, batch: &[Sample]) -> Result<Vec<SemanticLabelPair>> {
        let pairs: Vec<_> = batch.iter().map(|s| &s.images).collect();
        predict_scd(&self.model.infer(&pairs)?, self.threshold)
    }
}

/// Returns the ground truth; scores a perfect prediction.
pub struct GroundTruthPredictor;

impl Predictor for GroundTruthPredictor {
    fn predict(&self, batch: &[Sample]) -> Result<Vec<SemanticLabelPair>> {
        Ok(batch.iter().map(|s| s.labels.clone()).collect())
    }
}

/// Accumulates metrics of `predictor` over every sample of `data`.
pub fn evaluate(
    predictor: &dyn Predictor,
    data: &dyn Dataset,
    batch_size: usize,
    seeds: Vec<u64>,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm: Option<ConfusionMatrix> = None;
    let mut sc = ScdCounts::default();
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch_size.max(1)).min(data.len());
        let batch = (start..end)
            .map(|i| data.get(i))
            .collect::<Result<Vec<_>>>()?;
        let preds = predictor.predict(&batch)?;
        if preds.len() != batch.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} samples",
                preds.len(),
                batch.len()
            )));
        }
        for (pred, s) in preds.iter().zip(&batch) {
            let cm = cm.get_or_insert_with(|| ConfusionMatrix::new(s.labels.num_classes));
            accumulate(pred, &s.labels, cm, &mut sc)?;
        }
        start = end;
    }
    MetricsReport::new(&cm.expect("nonempty dataset"), &sc, data.len(), seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-step breakdowns.
    pub loss: LossBreakdown,
    /// Total loss of every step in order.
    pub step_totals: Vec<f64>,
    pub metrics: Option<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRef {
    pub epoch: usize,
    pub metric: SelectionMetric,
    pub value: f64,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
    pub best: Option<BestRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LogLine {
    Epoch(EpochRecord),
    Best(BestRef),
}

impl RunLog {
    /// Training-loss series across all steps.
    pub fn step_totals(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.step_totals.iter().copied())
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut log = RunLog::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                LogLine::Epoch(r) => log.records.push(r),
                LogLine::Best(b) => log.best = Some(b),
            }
        }
        Ok(log)
    }
}

struct LogWriter {
    path: PathBuf,
    file: std::fs::File,
}

impl LogWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    fn write(&mut self, line: &LogLine) -> Result<()> {
        let mut text = serde_json::to_string(line)?;
        text.push('\n');
        self.file
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Where `fit` writes; nothing is written when absent.
pub struct FitOutput<'a> {
    pub dir: &'a Path,
    pub palette: Option<&'a ClassPalette>,
}

fn draw_transform(rng: &mut ChaCha8Rng, square: bool) -> Dihedral {
    let mut t = Dihedral::random(rng);
    if !square && t.quarter_turns % 2 == 1 {
        // keep batch shapes uniform for non-square scenes
        t.quarter_turns = (t.quarter_turns + 1) % 4;
    }
    t
}

fn mean_breakdown(steps: &[LossBreakdown]) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for s in steps {
        m.ce += s.ce / n;
        m.dice += s.dice / n;
        m.pseudo += s.pseudo / n;
        m.consistency += s.consistency / n;
        m.change += s.change / n;
        m.total += s.total / n;
    }
    m
}

/// Trains `model` for `cfg.total_epochs` epochs. `predictor` replaces the
/// model for evaluation when given.
pub fn fit(
    model: &mut Model,
    train: &dyn Dataset,
    eval: &dyn Dataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    output: Option<FitOutput<'_>>,
    predictor: Option<&dyn Predictor>,
) -> Result<RunLog> {
    cfg.validate()?;
    weights.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut writer = match &output {
        Some(o) => {
            std::fs::create_dir_all(o.dir).map_err(|e| Error::io(o.dir, e))?;
            Some(LogWriter::create(o.dir.join("runlog.jsonl"))?)
        }
        None => None,
    };
    let schedule = cfg.schedule();
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay, cfg.nesterov);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = RunLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.total_epochs {
        let lr = schedule.lr_at(epoch as f64)?;
        order.shuffle(&mut rng);
        let mut steps = Vec::new();
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = train.get(i)?;
                let s = if cfg.augment {
                    let square = s.images.height() == s.images.width();
                    let t = draw_transform(&mut rng, square);
                    augment_with(&s, t)?
                } else {
                    s
                };
                batch.push(s);
            }
            let b = train_step(model, &mut opt, &batch, lr, weights, cfg.max_grad_norm).map_err(
                |e| match e {
                    Error::NonFiniteLoss(m) => {
                        Error::NonFiniteLoss(format!("epoch {epoch}, step {step}, lr {lr}: {m}"))
                    }
                    other => other,
                },
            )?;
            steps.push(b);
        }
        let is_last = epoch + 1 == cfg.total_epochs;
        let metrics = if !eval.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || is_last) {
            let mp = ModelPredictor {
                model,
                threshold: cfg.threshold,
            };
            let p: &dyn Predictor = predictor.unwrap_or(&mp);
            Some(evaluate(p, eval, cfg.batch_size, vec![cfg.seed])?.summary())
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss: mean_breakdown(&steps),
            step_totals: steps.iter().map(|s| s.total).collect(),
            metrics,
        };
        if let Some(w) = writer.as_mut() {
            w.write(&LogLine::Epoch(record.clone()))?;
        }
        let improved = metrics.map(|m| {
            let v = m.get(cfg.selection_metric);
            (v, log.best.as_ref().map_or(true, |b| v > b.value))
        });
        if let Some((value, true)) = improved {
            let checkpoint = match &output {
                Some(o) => {
                    model.save(
                        &o.dir.join("best.ckpt"),
                        epoch,
                        metrics.unwrap_or_default().to_map(),
                        o.palette,
                    )?;
                    Some("best.ckpt".to_string())
                }
                None => None,
            };
            log.best = Some(BestRef {
                epoch,
                metric: cfg.selection_metric,
                value,
                checkpoint,
            });
        }
        log.records.push(record);
    }
    let last = log.records.last().expect("at least one epoch");
    if let Some(o) = &output {
        let metrics = last.metrics.map(|m| m.to_map()).unwrap_or_default();
        model.save(&o.dir.join("final.ckpt"), last.epoch, metrics, o.palette)?;
        if log.best.is_none() {
            // nothing evaluated: the final weights stand in for the best
            std::fs::copy(o.dir.join("final.ckpt"), o.dir.join("best.ckpt"))
                .map_err(|e| Error::io(o.dir, e))?;
            log.best = Some(BestRef {
                epoch: last.epoch,
                metric: cfg.selection_metric,
                value: f64::NAN,
                checkpoint: Some("best.ckpt".into()),
            });
        }
    }
    if let (Some(w), Some(best)) = (writer.as_mut(), &log.best) {
        w.write(&LogLine::Best(best.clone()))?;
    }
    Ok(log)
}

/// Seed for per-sample work derived from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}
