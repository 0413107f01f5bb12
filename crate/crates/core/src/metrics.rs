//! SECOND-protocol evaluation: a confusion matrix over `{no-change} ∪
//! classes` accumulated from both dates, and the OA, mIoU, SeK and F_scd
//! scores derived from it.

use serde::{Deserialize, Serialize};

use crate::datamodel::SemanticLabelPair;
use crate::{Error, Result};

/// `(K+1) × (K+1)` counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub size: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        let size = num_classes + 1;
        Self {
            size,
            counts: vec![0; size * size],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let size = rows.len();
        if size < 2 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::DimensionMismatch(format!(
                "confusion matrix needs square rows, got {size} rows"
            )));
        }
        Ok(Self {
            size,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.size + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.size).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.size..(i + 1) * self.size].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.size).map(|i| self.get(i, j)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.size != other.size {
            return Err(Error::DimensionMismatch(format!(
                "merging {0}x{0} with {1}x{1}",
                self.size, other.size
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Change-aware true positives and marginals for F_scd.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScdCounts {
    pub tp: u64,
    pub pred_changed: u64,
    pub gt_changed: u64,
}

impl ScdCounts {
    pub fn merge(&mut self, other: &ScdCounts) {
        self.tp += other.tp;
        self.pred_changed += other.pred_changed;
        self.gt_changed += other.gt_changed;
    }
}

/// Adds both dates of one prediction to the running statistics.
pub fn accumulate(
    pred: &SemanticLabelPair,
    gt: &SemanticLabelPair,
    cm: &mut ConfusionMatrix,
    sc: &mut ScdCounts,
) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let k = cm.size - 1;
    for (p_map, g_map) in [(&pred.l1, &gt.l1), (&pred.l2, &gt.l2)] {
        for (&p, &g) in p_map.data.iter().zip(&g_map.data) {
            for label in [p, g] {
                if usize::from(label) > k {
                    return Err(Error::LabelOutOfRange {
                        label,
                        num_classes: k,
                    });
                }
            }
            cm.counts[usize::from(g) * cm.size + usize::from(p)] += 1;
            let (pc, gc) = (p != 0, g != 0);
            sc.tp += u64::from(pc && gc && p == g);
            sc.pred_changed += u64::from(pc);
            sc.gt_changed += u64::from(gc);
        }
    }
    Ok(())
}

fn nonempty(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::EmptyMatrix),
        t => Ok(t as f64),
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn oa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = nonempty(cm)?;
    let diag: u64 = (0..cm.size).map(|i| cm.get(i, i)).sum();
    Ok(diag as f64 / total)
}

/// IoU of the no-change class.
pub fn iou_nochange(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    let q00 = cm.get(0, 0) as f64;
    Ok(ratio(q00, (cm.row_sum(0) + cm.col_sum(0)) as f64 - q00))
}

/// Changed-class diagonal over every count except `q00`.
pub fn iou_changed(cm: &ConfusionMatrix) -> Result<f64> {
    let total = nonempty(cm)?;
    let diag: u64 = (1..cm.size).map(|i| cm.get(i, i)).sum();
    Ok(ratio(diag as f64, total - cm.get(0, 0) as f64))
}

pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    Ok((iou_nochange(cm)? + iou_changed(cm)?) / 2.0)
}

/// Separated kappa: kappa on the matrix with `q00` zeroed, scaled by
/// `exp(IoU_ch − 1)`; 0 when the zeroed matrix is empty or chance
/// agreement is 1.
pub fn sek(cm: &ConfusionMatrix) -> Result<f64> {
    nonempty(cm)?;
    let mut q = cm.clone();
    q.counts[0] = 0;
    let total = q.total() as f64;
    if total == 0.0 {
        return Ok(0.0);
    }
    let rho = (0..q.size).map(|i| q.get(i, i)).sum::<u64>() as f64 / total;
    let eta = (0..q.size)
        .map(|j| q.row_sum(j) as f64 * q.col_sum(j) as f64)
        .sum::<f64>()
        / (total * total);
    if eta == 1.0 {
        return Ok(0.0);
    }
    let kappa = (rho - eta) / (1.0 - eta);
    Ok((iou_changed(cm)? - 1.0).exp() * kappa)
}

pub fn fscd(sc: &ScdCounts) -> f64 {
    let p = ratio(sc.tp as f64, sc.pred_changed as f64);
    let r = ratio(sc.tp as f64, sc.gt_changed as f64);
    ratio(2.0 * p * r, p + r)
}

/// Per-class IoU over the full matrix, index 0 being no-change.
pub fn per_class_iou(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.size)
        .map(|i| {
            let tp = cm.get(i, i) as f64;
            ratio(tp, (cm.row_sum(i) + cm.col_sum(i)) as f64 - tp)
        })
        .collect()
}

/// Scores of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub oa: f64,
    pub fscd: f64,
    pub miou: f64,
    pub sek: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    #[default]
    Fscd,
    Sek,
    Miou,
    Oa,
}

impl MetricSummary {
    pub fn get(&self, m: SelectionMetric) -> f64 {
        match m {
            SelectionMetric::Fscd => self.fscd,
            SelectionMetric::Sek => self.sek,
            SelectionMetric::Miou => self.miou,
            SelectionMetric::Oa => self.oa,
        }
    }

    pub fn to_map(&self) -> std::collections::BTreeMap<String, f64> {
        [
            ("oa", self.oa),
            ("fscd", self.fscd),
            ("miou", self.miou),
            ("sek", self.sek),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Full evaluation report, written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub fscd: f64,
    pub miou: f64,
    pub iou_nochange: f64,
    pub iou_changed: f64,
    pub sek: f64,
    pub per_class_iou: Vec<f64>,
    pub n_pixels: u64,
    pub n_scenes: usize,
    pub seeds: Vec<u64>,
    pub confusion: Vec<Vec<u64>>,
    pub scd_counts: ScdCounts,
}

impl MetricsReport {
    pub fn new(
        cm: &ConfusionMatrix,
        sc: &ScdCounts,
        n_scenes: usize,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        Ok(Self {
            oa: oa(cm)?,
            fscd: fscd(sc),
            miou: miou(cm)?,
            iou_nochange: iou_nochange(cm)?,
            iou_changed: iou_changed(cm)?,
            sek: sek(cm)?,
            per_class_iou: per_class_iou(cm),
            // both dates are counted
            n_pixels: cm.total() / 2,
            n_scenes,
            seeds,
            confusion: cm.rows(),
            scd_counts: *sc,
        })
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            oa: self.oa,
            fscd: self.fscd,
            miou: self.miou,
            sek: self.sek,
        }
    }
}

/// Mean and sample standard deviation; the deviation is `None` for fewer
/// than two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some((mean, std))
}
