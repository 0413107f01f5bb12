//! Training objective: changed-region cross-entropy and Dice, pseudo-label
//! cross-entropy on unchanged regions, bi-temporal consistency, and change
//! map supervision.
//!
//! Probability inputs are `[n, K, h, w]` (semantic) and `[n, 1, h, w]`
//! (change) variables; all reductions run over every pixel of the batch.

use scd_autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::datamodel::SemanticLabelPair;
use crate::{Error, Result};

/// Floor applied to probabilities inside logarithms of the semantic terms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Clamp for the change-map cross-entropy, `[ε, 1 − ε]`.
pub const BCE_EPS: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    /// Weight of the change-map term.
    pub change: f64,
    /// Pseudo-label confidence threshold.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda1: 1.0,
            change: 1.0,
            tau: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("loss.alpha", self.alpha),
            ("loss.beta", self.beta),
            ("loss.gamma", self.gamma),
            ("loss.lambda1", self.lambda1),
            ("loss.change", self.change),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{key} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "loss.tau must be in (0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Constant supervision tensors for a batch.
#[derive(Clone, Debug)]
pub struct Targets {
    pub num_classes: usize,
    /// One-hot class targets `[n, K, h, w]`; all-zero at no-change pixels.
    pub onehot1: Tensor,
    pub onehot2: Tensor,
    /// Change mask `[n, 1, h, w]` as 0/1.
    pub changed: Tensor,
}

impl Targets {
    pub fn from_labels(labels: &[&SemanticLabelPair]) -> Result<Self> {
        let first = labels.first().ok_or(Error::EmptyDataset)?;
        let (k, h, w) = (first.num_classes, first.height(), first.width());
        let plane = h * w;
        let n = labels.len();
        let mut onehot1 = Tensor::zeros(&[n, k, h, w]);
        let mut onehot2 = Tensor::zeros(&[n, k, h, w]);
        let mut changed = Tensor::zeros(&[n, 1, h, w]);
        for (i, l) in labels.iter().enumerate() {
            if (l.num_classes, l.height(), l.width()) != (k, h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "label pair {i} is {}x{} with K={}, batch is {h}x{w} with K={k}",
                    l.height(),
                    l.width(),
                    l.num_classes
                )));
            }
            for p in 0..plane {
                let (a, b) = (l.l1.data[p], l.l2.data[p]);
                if a != 0 {
                    onehot1.data_mut()[(i * k + usize::from(a) - 1) * plane + p] = 1.0;
                }
                if b != 0 {
                    onehot2.data_mut()[(i * k + usize::from(b) - 1) * plane + p] = 1.0;
                }
                if a != 0 || b != 0 {
                    changed.data_mut()[i * plane + p] = 1.0;
                }
            }
        }
        Ok(Self {
            num_classes: k,
            onehot1,
            onehot2,
            changed,
        })
    }

    pub fn changed_count(&self) -> usize {
        self.changed.data().iter().filter(|&&m| m != 0.0).count()
    }

    pub fn unchanged(&self) -> Tensor {
        self.changed.map(|m| 1.0 - m)
    }
}

fn zero() -> Var {
    Var::constant(Tensor::scalar(0.0))
}

fn check_probs(y: &Var, t: &Targets) -> Result<()> {
    if y.shape() != t.onehot1.shape() {
        return Err(Error::DimensionMismatch(format!(
            "probabilities {:?} vs targets {:?}",
            y.shape(),
            t.onehot1.shape()
        )));
    }
    Ok(())
}

/// `Σ_p target_p · (−ln y_p)` over all entries.
fn masked_nll(y: &Var, target: &Tensor) -> Result<Var> {
    Ok(y.clamp(PROB_FLOOR, 1.0)
        .ln()
        .mul(&Var::constant(target.clone()))?
        .sum_all()
        .neg())
}

/// Cross-entropy over changed pixels, averaged over pixels and the two dates.
pub fn semantic_ce(y1: &Var, y2: &Var, t: &Targets) -> Result<Var> {
    check_probs(y1, t)?;
    check_probs(y2, t)?;
    let n_changed = t.changed_count();
    if n_changed == 0 {
        return Ok(zero());
    }
    // One-hot targets are already zero outside the change mask.
    let total = masked_nll(y1, &t.onehot1)?.add(&masked_nll(y2, &t.onehot2)?)?;
    Ok(total.scale(1.0 / (2 * n_changed) as f64))
}

/// Per-date soft Dice over changed pixels, macro-averaged over the classes
/// present in that date's changed-region labels; dates without any present
/// class are skipped.
pub fn semantic_dice(y1: &Var, y2: &Var, t: &Targets) -> Result<Var> {
    check_probs(y1, t)?;
    check_probs(y2, t)?;
    let mask = Var::constant(t.changed.clone());
    let mut terms = Vec::new();
    for (y, onehot) in [(y1, &t.onehot1), (y2, &t.onehot2)] {
        let counts = class_counts(onehot, t.num_classes);
        let present: Vec<usize> = (0..t.num_classes).filter(|&k| counts[k] > 0.0).collect();
        if present.is_empty() {
            continue;
        }
        let ym = y.mul(&mask)?;
        let inter = ym
            .mul(&Var::constant(onehot.clone()))?
            .sum_dims(&[0, 2, 3])?;
        let sum_y = ym.sum_dims(&[0, 2, 3])?;
        let denom = sum_y.add(&Var::constant(
            Tensor::new(&[1, t.num_classes, 1, 1], counts.clone())?.map(|c| c + DICE_EPS),
        ))?;
        let ratio = inter.scale(2.0).div(&denom)?;
        let weight = 1.0 / present.len() as f64;
        let select = Tensor::from_fn(&[1, t.num_classes, 1, 1], |k| {
            if counts[k] > 0.0 {
                weight
            } else {
                0.0
            }
        });
        // 1 − Σ_k w_k · ratio_k, with Σ_k w_k = 1 over present classes.
        let mean_ratio = ratio.mul(&Var::constant(select))?.sum_all();
        terms.push(mean_ratio.neg().add_scalar(1.0));
    }
    if terms.is_empty() {
        return Ok(zero());
    }
    let n = terms.len() as f64;
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scale(1.0 / n))
}

fn class_counts(onehot: &Tensor, k: usize) -> Vec<f64> {
    let shape = onehot.shape();
    let (n, plane) = (shape[0], shape[2] * shape[3]);
    let mut counts = vec![0.0; k];
    for i in 0..n {
        for (c, count) in counts.iter_mut().enumerate() {
            *count += onehot.data()[(i * k + c) * plane..][..plane]
                .iter()
                .sum::<f64>();
        }
    }
    counts
}

/// High-confidence targets on unchanged pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    /// `n × h × w`; `1 + class` where included, 0 where excluded.
    pub labels: Vec<u8>,
    pub shape: [usize; 3],
    pub tau: f64,
}

impl PseudoLabels {
    pub fn included(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// At unchanged pixels, `v = (y1 + y2) / 2`; the pixel is labelled
/// `argmax v` when `max v ≥ tau`. Built from values only, so no gradient
/// reaches the labels.
pub fn make_pseudo_labels(y1: &Var, y2: &Var, t: &Targets, tau: f64) -> Result<PseudoLabels> {
    check_probs(y1, t)?;
    check_probs(y2, t)?;
    let (n, k, h, w) = y1.value().dims4()?;
    let plane = h * w;
    let (a, b) = (y1.value().data(), y2.value().data());
    let mut labels = vec![0u8; n * plane];
    for i in 0..n {
        for p in 0..plane {
            if t.changed.data()[i * plane + p] != 0.0 {
                continue;
            }
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let idx = (i * k + c) * plane + p;
                let v = 0.5 * (a[idx] + b[idx]);
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            if best_v >= tau {
                labels[i * plane + p] = (best + 1) as u8;
            }
        }
    }
    Ok(PseudoLabels {
        labels,
        shape: [n, h, w],
        tau,
    })
}

/// Cross-entropy against pseudo-labels, averaged over included pixels and
/// both dates.
pub fn pseudo_label_loss(y1: &Var, y2: &Var, pseudo: &PseudoLabels) -> Result<Var> {
    let (n, k, h, w) = y1.value().dims4()?;
    if pseudo.shape != [n, h, w] || y2.shape() != y1.shape() {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-labels {:?} vs probabilities {:?}",
            pseudo.shape,
            y1.shape()
        )));
    }
    let included = pseudo.included();
    if included == 0 {
        return Ok(zero());
    }
    let plane = h * w;
    let mut target = Tensor::zeros(&[n, k, h, w]);
    for i in 0..n {
        for p in 0..plane {
            let l = pseudo.labels[i * plane + p];
            if l != 0 {
                target.data_mut()[(i * k + usize::from(l) - 1) * plane + p] = 1.0;
            }
        }
    }
    let total = masked_nll(y1, &target)?.add(&masked_nll(y2, &target)?)?;
    Ok(total.scale(1.0 / (2 * included) as f64))
}

/// Mean over all pixels of `1 − cos(y1, y2)` where unchanged and
/// `cos(y1, y2)` where changed.
pub fn consistency_loss(y1: &Var, y2: &Var, t: &Targets) -> Result<Var> {
    check_probs(y1, t)?;
    check_probs(y2, t)?;
    let n1 = y1.square().sum_dims(&[1])?.sqrt();
    let n2 = y2.square().sum_dims(&[1])?.sqrt();
    for norms in [&n1, &n2] {
        if let Some(p) = norms.value().data().iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroVector(p));
        }
    }
    let cos = y1.mul(y2)?.sum_dims(&[1])?.div(&n1.mul(&n2)?)?;
    let unchanged = t.unchanged();
    // unchanged·(1 − cos) + changed·cos = unchanged + cos·(changed − unchanged)
    let sign = t.changed.zip_map(&unchanged, |c, u| c - u);
    Ok(cos
        .mul(&Var::constant(sign))?
        .add(&Var::constant(unchanged))?
        .mean_all())
}

/// Mean binary cross-entropy of the change map against the change mask.
pub fn change_loss(yc: &Var, t: &Targets) -> Result<Var> {
    if yc.shape() != t.changed.shape() {
        return Err(Error::DimensionMismatch(format!(
            "change map {:?} vs mask {:?}",
            yc.shape(),
            t.changed.shape()
        )));
    }
    let p = yc.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let pos = p.ln().mul(&Var::constant(t.changed.clone()))?;
    let neg = p
        .neg()
        .add_scalar(1.0)
        .ln()
        .mul(&Var::constant(t.unchanged()))?;
    Ok(pos.add(&neg)?.mean_all().neg())
}

/// The individual terms of the objective.
#[derive(Clone)]
pub struct LossTerms {
    pub ce: Var,
    /// `None` when the Dice weight is zero and the term was skipped.
    pub dice: Option<Var>,
    pub pseudo: Var,
    pub consistency: Var,
    pub change: Var,
}

/// Scalar values of every term plus the total, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub dice: f64,
    pub pseudo: f64,
    pub consistency: f64,
    pub change: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines logged components with the same arithmetic as the
    /// differentiable total.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        combine(
            self.ce,
            self.dice,
            self.pseudo,
            self.consistency,
            self.change,
            w,
        )
    }
}

/// `α(ce + λ1·dice) + β·pseudo + γ·consistency + w_chg·change`.
pub fn combine(
    ce: f64,
    dice: f64,
    pseudo: f64,
    consistency: f64,
    change: f64,
    w: &LossWeights,
) -> f64 {
    let sem = if w.lambda1 == 0.0 {
        ce
    } else {
        ce + w.lambda1 * dice
    };
    w.alpha * sem + w.beta * pseudo + w.gamma * consistency + w.change * change
}

/// Differentiable counterpart of [`combine`].
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let dice_v = terms.dice.as_ref().map_or(0.0, |d| d.value().item());
    let values = [
        ("ce", terms.ce.value().item()),
        ("dice", dice_v),
        ("pseudo", terms.pseudo.value().item()),
        ("consistency", terms.consistency.value().item()),
        ("change", terms.change.value().item()),
    ];
    if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("{name} = {v}")));
    }
    let sem = match (&terms.dice, w.lambda1 == 0.0) {
        (Some(d), false) => terms.ce.add(&d.scale(w.lambda1))?,
        _ => terms.ce.clone(),
    };
    let total = sem
        .scale(w.alpha)
        .add(&terms.pseudo.scale(w.beta))?
        .add(&terms.consistency.scale(w.gamma))?
        .add(&terms.change.scale(w.change))?;
    let breakdown = LossBreakdown {
        ce: values[0].1,
        dice: dice_v,
        pseudo: values[2].1,
        consistency: values[3].1,
        change: values[4].1,
        total: total.value().item(),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("total = {}", breakdown.total)));
    }
    Ok((total, breakdown))
}

/// Evaluates every term on network outputs and combines them.
pub fn compute_losses(
    y1: &Var,
    y2: &Var,
    yc: &Var,
    t: &Targets,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let pseudo = make_pseudo_labels(y1, y2, t, w.tau)?;
    let terms = LossTerms {
        ce: semantic_ce(y1, y2, t)?,
        dice: if w.lambda1 == 0.0 {
            None
        } else {
            Some(semantic_dice(y1, y2, t)?)
        },
        pseudo: pseudo_label_loss(y1, y2, &pseudo)?,
        consistency: consistency_loss(y1, y2, t)?,
        change: change_loss(yc, t)?,
    };
    total_loss(&terms, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::LabelMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use scd_autograd::gradcheck::{central_difference, relative_error};

    fn pair(l1: Vec<u8>, l2: Vec<u8>, h: usize, w: usize, k: usize) -> SemanticLabelPair {
        SemanticLabelPair::new(
            LabelMap {
                height: h,
                width: w,
                data: l1,
            },
            LabelMap {
                height: h,
                width: w,
                data: l2,
            },
            k,
        )
        .unwrap()
    }

    fn probs(rng: &mut ChaCha8Rng, n: usize, k: usize, h: usize, w: usize) -> Tensor {
        let logits = Var::constant(Tensor::from_fn(&[n, k, h, w], |_| rng.gen_range(-2.0..2.0)));
        logits.softmax(1).unwrap().value().clone()
    }

    fn onehot(labels: &[u8], k: usize, h: usize, w: usize) -> Tensor {
        // label 0 maps to class 0 so the probability vector stays valid
        Tensor::from_fn(&[1, k, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            f64::from(u8::from(usize::from(labels[p].max(1)) - 1 == c))
        })
    }

    fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> SemanticLabelPair {
        let mut l1 = vec![0; h * w];
        let mut l2 = vec![0; h * w];
        for p in 0..h * w {
            if rng.gen_bool(0.5) {
                l1[p] = rng.gen_range(1..=k as u8);
                l2[p] = rng.gen_range(1..=k as u8);
            }
        }
        pair(l1, l2, h, w, k)
    }

    #[test]
    fn uniform_prediction_ce_is_ln_k() {
        let l = pair(vec![1, 2, 3, 4], vec![4, 3, 2, 1], 2, 2, 4);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y = Var::constant(Tensor::full(&[1, 4, 2, 2], 0.25));
        let ce = semantic_ce(&y, &y, &t).unwrap().value().item();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_give_zero_losses() {
        let (l1, l2) = (vec![0, 2, 1, 0], vec![0, 1, 3, 0]);
        let l = pair(l1.clone(), l2.clone(), 2, 2, 3);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y1 = Var::constant(onehot(&l1, 3, 2, 2));
        let y2 = Var::constant(onehot(&l2, 3, 2, 2));
        assert!(semantic_ce(&y1, &y2, &t).unwrap().value().item().abs() < 1e-12);
        assert!(semantic_dice(&y1, &y2, &t).unwrap().value().item().abs() < 1e-6);
        let yc = Var::constant(t.changed.clone());
        assert!(change_loss(&yc, &t).unwrap().value().item() < 1e-6);
    }

    #[test]
    fn disjoint_prediction_gives_unit_dice() {
        let l = pair(vec![1, 1, 2, 2], vec![2, 2, 1, 1], 2, 2, 2);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y1 = Var::constant(onehot(&[2, 2, 1, 1], 2, 2, 2));
        let y2 = Var::constant(onehot(&[1, 1, 2, 2], 2, 2, 2));
        assert!((semantic_dice(&y1, &y2, &t).unwrap().value().item() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn half_confidence_dice_is_one_half() {
        let l = pair(vec![1, 1, 2, 2], vec![1, 1, 2, 2], 2, 2, 2);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y = Var::constant(Tensor::full(&[1, 2, 2, 2], 0.5));
        let d = semantic_dice(&y, &y, &t).unwrap().value().item();
        assert!((d - (1.0 - 2.0 * 1.0 / (4.0 + DICE_EPS))).abs() < 1e-15);
        assert!((d - 0.5).abs() < 1e-6);
    }

    #[test]
    fn empty_change_region_gives_zero_semantic_terms() {
        let l = pair(vec![0; 4], vec![0; 4], 2, 2, 3);
        let t = Targets::from_labels(&[&l]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = Var::constant(probs(&mut rng, 1, 3, 2, 2));
        assert_eq!(semantic_ce(&y, &y, &t).unwrap().value().item(), 0.0);
        assert_eq!(semantic_dice(&y, &y, &t).unwrap().value().item(), 0.0);
    }

    #[test]
    fn pseudo_label_threshold() {
        let l = pair(vec![0, 0], vec![0, 0], 1, 2, 2);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y = Var::constant(Tensor::new(&[1, 2, 1, 2], vec![0.9, 0.6, 0.1, 0.4]).unwrap());
        let p = make_pseudo_labels(&y, &y, &t, 0.8).unwrap();
        assert_eq!(p.labels, vec![1, 0]);
        let none = make_pseudo_labels(&y, &y, &t, 0.95).unwrap();
        assert_eq!(
            pseudo_label_loss(&y, &y, &none).unwrap().value().item(),
            0.0
        );
    }

    #[test]
    fn pseudo_labels_skip_changed_pixels() {
        let l = pair(vec![1, 0], vec![2, 0], 1, 2, 2);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y = Var::constant(Tensor::new(&[1, 2, 1, 2], vec![0.99, 0.99, 0.01, 0.01]).unwrap());
        assert_eq!(
            make_pseudo_labels(&y, &y, &t, 0.8).unwrap().labels,
            vec![0, 1]
        );
    }

    #[test]
    fn consistency_contributions() {
        // pixel 0 unchanged and identical, pixel 1 changed and identical,
        // pixel 2 changed and orthogonal.
        let l = pair(vec![0, 1, 1], vec![0, 2, 2], 1, 3, 2);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y1 =
            Var::constant(Tensor::new(&[1, 2, 1, 3], vec![0.3, 0.6, 1.0, 0.7, 0.4, 0.0]).unwrap());
        let y2 =
            Var::constant(Tensor::new(&[1, 2, 1, 3], vec![0.3, 0.6, 0.0, 0.7, 0.4, 1.0]).unwrap());
        let v = consistency_loss(&y1, &y2, &t).unwrap().value().item();
        assert!((v - (0.0 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let l = pair(vec![1, 0], vec![2, 0], 1, 2, 2);
        let t = Targets::from_labels(&[&l]).unwrap();
        let yc = Var::constant(Tensor::full(&[1, 1, 1, 2], 0.5));
        assert!((change_loss(&yc, &t).unwrap().value().item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn terms_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (k, h, w) = (
                rng.gen_range(2..5),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
            );
            let l = random_pair(&mut rng, h, w, k);
            let t = Targets::from_labels(&[&l]).unwrap();
            let (a, b) = (probs(&mut rng, 1, k, h, w), probs(&mut rng, 1, k, h, w));
            let (y1, y2) = (Var::constant(a.clone()), Var::constant(b.clone()));
            let at = |y: &Tensor, c: usize, p: usize| y.data()[c * h * w + p];
            let (mut ce, mut nc) = (0.0, 0);
            let mut cons = 0.0;
            for p in 0..h * w {
                let (c1, c2) = (l.l1.data[p], l.l2.data[p]);
                let dot: f64 = (0..k).map(|c| at(&a, c, p) * at(&b, c, p)).sum();
                let na: f64 = (0..k).map(|c| at(&a, c, p).powi(2)).sum::<f64>().sqrt();
                let nb: f64 = (0..k).map(|c| at(&b, c, p).powi(2)).sum::<f64>().sqrt();
                let cos = dot / (na * nb);
                if c1 != 0 {
                    ce -= at(&a, usize::from(c1) - 1, p).ln() + at(&b, usize::from(c2) - 1, p).ln();
                    nc += 1;
                    cons += cos;
                } else {
                    cons += 1.0 - cos;
                }
            }
            let expect_ce = if nc == 0 { 0.0 } else { ce / (2 * nc) as f64 };
            let got_ce = semantic_ce(&y1, &y2, &t).unwrap().value().item();
            assert!(relative_error(got_ce, expect_ce, 1e-12) < 1e-9);
            let got_cons = consistency_loss(&y1, &y2, &t).unwrap().value().item();
            assert!(relative_error(got_cons, cons / (h * w) as f64, 1e-12) < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, h, w) = (3, 2, 3);
        let l = random_pair(&mut rng, h, w, k);
        let t = Targets::from_labels(&[&l]).unwrap();
        let a = probs(&mut rng, 1, k, h, w);
        let b = probs(&mut rng, 1, k, h, w);
        let weights = LossWeights::default();
        let yc = Tensor::from_fn(&[1, 1, h, w], |_| rng.gen_range(0.1..0.9));
        let eval = |a: &Tensor| {
            let (y1, y2) = (Var::constant(a.clone()), Var::constant(b.clone()));
            compute_losses(&y1, &y2, &Var::constant(yc.clone()), &t, &weights)
                .unwrap()
                .1
                .total
        };
        let y1 = Var::leaf(a.clone());
        let (total, _) = compute_losses(
            &y1,
            &Var::constant(b.clone()),
            &Var::constant(yc.clone()),
            &t,
            &weights,
        )
        .unwrap();
        let g = total.backward().remove(&y1).unwrap();
        for i in 0..a.numel() {
            let fd = central_difference(eval, &a, i, 1e-6);
            assert!(
                relative_error(g.data()[i], fd, 1e-6) < 1e-5,
                "index {i}: {} vs {fd}",
                g.data()[i]
            );
        }
    }

    #[test]
    fn lambda_zero_matches_ce_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = random_pair(&mut rng, 3, 3, 3);
        let t = Targets::from_labels(&[&l]).unwrap();
        let y1 = Var::constant(probs(&mut rng, 1, 3, 3, 3));
        let y2 = Var::constant(probs(&mut rng, 1, 3, 3, 3));
        let yc = Var::constant(Tensor::full(&[1, 1, 3, 3], 0.3));
        let w = LossWeights {
            lambda1: 0.0,
            ..LossWeights::default()
        };
        let (_, b) = compute_losses(&y1, &y2, &yc, &t, &w).unwrap();
        assert_eq!(b.total, b.recombine(&w));
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            lambda1: 0.0,
            ..LossWeights::default()
        };
        let (_, z) = compute_losses(&y1, &y2, &yc, &t, &zero).unwrap();
        assert_eq!(z.total, z.change);
    }

    #[test]
    fn non_finite_terms_are_rejected() {
        let terms = LossTerms {
            ce: Var::constant(Tensor::scalar(f64::NAN)),
            dice: None,
            pseudo: zero(),
            consistency: zero(),
            change: zero(),
        };
        assert!(matches!(
            total_loss(&terms, &LossWeights::default()),
            Err(Error::NonFiniteLoss(_))
        ));
    }
}
