//! The triple encoder-decoder: a weight-shared semantic encoder applied to
//! both dates, a change encoder over their features, optional token
//! interaction at one scale, and attention-gated decoders producing two
//! class-probability maps and a change-probability map.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod interaction;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, ParamStore, Tensor, Var};

pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointHeader, StoredParam, FORMAT_VERSION, MAGIC,
};
pub use config::{
    CbamConfig, DecoderConfig, EncoderConfig, InteractionConfig, ModelConfig, Normalization,
    STAGE_STRIDES,
};
pub use decoder::{Decoded, Decoder, Head};
pub use encoder::{change_input, ChangeEncoder, Encoder, MultiScaleFeatures};
pub use interaction::{Interacted, Interaction};

use crate::cbam::{Fused, GateMode};
use crate::datamodel::{check_size, ClassPalette, ImagePair, LabelMap, SemanticLabelPair};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Network outputs for a batch: `y1`, `y2` are `[n, K, h, w]` class
/// probabilities, `yc` is `[n, 1, h, w]` change probability.
pub struct SemanticChangeOutputs {
    pub y1: Var,
    pub y2: Var,
    pub yc: Var,
    /// Attention weights of the interaction stage, when enabled.
    pub attention: Option<Var>,
    /// Per-decoder fusion gates: date 1, date 2, change.
    pub fusions: [Vec<Fused>; 3],
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Overrides learned gates; `Identity` turns every fusion into plain
    /// concatenation while keeping all other parameters.
    pub gate_mode: GateMode,
    encoder: Encoder,
    change_encoder: ChangeEncoder,
    interaction: Option<Interaction>,
    semantic_decoders: Vec<Decoder>,
    change_decoder: Decoder,
}

impl Model {
    /// Seeded initialisation; loads pretrained encoder weights if configured.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let encoder = Encoder::new(&mut store, "encoder", enc, &mut rng)?;
        let change_encoder = ChangeEncoder::new(&mut store, "change_encoder", enc, &mut rng)?;
        let interaction = match config.interaction_stage() {
            Some(s) if config.interaction.enabled => Some(Interaction::new(
                &mut store,
                "interaction",
                enc.stage_channels[s + 1],
                config.interaction.heads,
                &mut rng,
            )?),
            _ => None,
        };
        let k = config.num_classes;
        let n_sem = if config.decoder.share_semantic { 1 } else { 2 };
        let semantic_decoders = (0..n_sem)
            .map(|i| {
                let name = if n_sem == 1 {
                    "sem_decoder".to_string()
                } else {
                    format!("sem_decoder{}", i + 1)
                };
                Decoder::new(&mut store, &name, &config, Head::Classes(k), &mut rng)
            })
            .collect::<Result<_>>()?;
        let change_decoder = Decoder::new(
            &mut store,
            "change_decoder",
            &config,
            Head::Binary,
            &mut rng,
        )?;
        let gate_mode = if config.cbam.enabled {
            GateMode::Learned
        } else {
            GateMode::Identity
        };
        let mut model = Self {
            config,
            store,
            gate_mode,
            encoder,
            change_encoder,
            interaction,
            semantic_decoders,
            change_decoder,
        };
        if let Some(path) = model.config.encoder.pretrained.clone() {
            model.load_pretrained_encoder(&path)?;
        }
        Ok(model)
    }

    fn load_pretrained_encoder(&mut self, path: &Path) -> Result<()> {
        let (_, params) = read_checkpoint(path)?;
        let copied = checkpoint::copy_into_store(
            path,
            &params,
            &mut self.store,
            |n| n.starts_with("encoder."),
            false,
        )?;
        if copied == 0 {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                message: "no encoder parameters found".into(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, image: &Var, b: &Binding) -> Result<MultiScaleFeatures> {
        let (_, c, h, w) = image.value().dims4()?;
        if c != 3 {
            return Err(Error::DimensionMismatch(format!(
                "expected 3 input channels, got {c}"
            )));
        }
        check_size(h, w)?;
        self.encoder.forward(image, b)
    }

    pub fn change_encode(
        &self,
        f1: &MultiScaleFeatures,
        f2: &MultiScaleFeatures,
        b: &Binding,
    ) -> Result<MultiScaleFeatures> {
        self.change_encoder.forward(f1, f2, b)
    }

    pub fn interaction(&self) -> Option<&Interaction> {
        self.interaction.as_ref()
    }

    fn semantic_decoder(&self, date: usize) -> &Decoder {
        &self.semantic_decoders[date.min(self.semantic_decoders.len() - 1)]
    }

    /// `t1`, `t2`: `[n, 3, h, w]` batches. Each date is encoded on its own so
    /// batch statistics never mix the two dates.
    pub fn forward(&self, t1: &Var, t2: &Var, b: &Binding) -> Result<SemanticChangeOutputs> {
        if t1.shape() != t2.shape() {
            return Err(Error::DimensionMismatch(format!(
                "t1 {:?} vs t2 {:?}",
                t1.shape(),
                t2.shape()
            )));
        }
        let (_, _, h, w) = t1.value().dims4()?;
        let mut f1 = self.encode(t1, b)?;
        let mut f2 = self.encode(t2, b)?;
        let mut fc = self.change_encode(&f1, &f2, b)?;
        let mut attention = None;
        if let (Some(inter), Some(s)) = (&self.interaction, self.config.interaction_stage()) {
            let out = inter.forward([&f1.stages[s], &f2.stages[s], &fc.stages[s]], b)?;
            let [a, bb, c] = out.streams;
            f1.stages[s] = a;
            f2.stages[s] = bb;
            fc.stages[s] = c;
            attention = Some(out.weights);
        }
        let d1 = self
            .semantic_decoder(0)
            .forward(&f1, (h, w), self.gate_mode, b)?;
        let d2 = self
            .semantic_decoder(1)
            .forward(&f2, (h, w), self.gate_mode, b)?;
        let dc = self
            .change_decoder
            .forward(&fc, (h, w), self.gate_mode, b)?;
        Ok(SemanticChangeOutputs {
            y1: d1.probs,
            y2: d2.probs,
            yc: dc.probs,
            attention,
            fusions: [d1.fusions, d2.fusions, dc.fusions],
        })
    }

    /// Gradient-free forward over image pairs using running statistics.
    pub fn infer(&self, pairs: &[&ImagePair]) -> Result<SemanticChangeOutputs> {
        let (t1, t2) = batch_images(pairs, self.config.normalization.as_ref())?;
        let b = Binding::new(&self.store, false);
        self.forward(&Var::constant(t1), &Var::constant(t2), &b)
    }

    pub fn save(
        &self,
        path: &Path,
        epoch: usize,
        metrics: BTreeMap<String, f64>,
        palette: Option<&ClassPalette>,
    ) -> Result<()> {
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            model_config: self.config.clone(),
            epoch,
            metrics,
            palette: palette.map(|p| p.entries().to_vec()),
        };
        write_checkpoint(path, &header, &self.store)
    }

    /// Rebuilds the model stored at `path`. Pretrained-weight references in
    /// the stored config are not followed; the stored values take their place.
    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, params) = read_checkpoint(path)?;
        let mut config = header.model_config.clone();
        config.encoder.pretrained = None;
        let mut model = Model::new(config)?;
        model.config.encoder.pretrained = header.model_config.encoder.pretrained.clone();
        checkpoint::copy_into_store(path, &params, &mut model.store, |_| true, true)?;
        Ok((model, header))
    }
}

/// Stacks pairs into two `[n, 3, h, w]` tensors, applying normalisation.
pub fn batch_images(
    pairs: &[&ImagePair],
    norm: Option<&Normalization>,
) -> Result<(Tensor, Tensor)> {
    let first = pairs.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height(), first.width());
    let plane = h * w;
    let mut d1 = Vec::with_capacity(pairs.len() * 3 * plane);
    let mut d2 = Vec::with_capacity(pairs.len() * 3 * plane);
    for p in pairs {
        if (p.height(), p.width()) != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "scene {} is {}x{}, batch is {h}x{w}",
                p.scene_id,
                p.height(),
                p.width()
            )));
        }
        for (img, dst) in [(&p.t1, &mut d1), (&p.t2, &mut d2)] {
            match norm {
                None => dst.extend_from_slice(&img.data),
                Some(n) => {
                    for c in 0..3 {
                        dst.extend(
                            img.data[c * plane..(c + 1) * plane]
                                .iter()
                                .map(|v| (v - n.mean[c]) / n.std[c]),
                        );
                    }
                }
            }
        }
    }
    let shape = [pairs.len(), 3, h, w];
    Ok((Tensor::new(&shape, d1)?, Tensor::new(&shape, d2)?))
}

/// Per-pixel labelling: below `threshold` change probability both dates get
/// 0, otherwise `1 + argmax` of each date's class probabilities, ties going
/// to the lower class.
pub fn predict_scd(out: &SemanticChangeOutputs, threshold: f64) -> Result<Vec<SemanticLabelPair>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::OutOfRange {
            what: "threshold",
            value: threshold,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let (n, k, h, w) = out.y1.value().dims4()?;
    if out.y2.shape() != out.y1.shape() || out.yc.shape() != [n, 1, h, w] {
        return Err(Error::DimensionMismatch(format!(
            "outputs {:?}, {:?}, {:?}",
            out.y1.shape(),
            out.y2.shape(),
            out.yc.shape()
        )));
    }
    let plane = h * w;
    let (y1, y2, yc) = (
        out.y1.value().data(),
        out.y2.value().data(),
        out.yc.value().data(),
    );
    let argmax = |y: &[f64], base: usize, p: usize| -> u8 {
        let mut best = 0;
        for c in 1..k {
            if y[base + c * plane + p] > y[base + best * plane + p] {
                best = c;
            }
        }
        (best + 1) as u8
    };
    let mut result = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * k * plane;
        let (mut l1, mut l2) = (LabelMap::zeros(h, w), LabelMap::zeros(h, w));
        for p in 0..plane {
            if yc[i * plane + p] >= threshold {
                l1.data[p] = argmax(y1, base, p);
                l2.data[p] = argmax(y2, base, p);
            }
        }
        result.push(SemanticLabelPair::new(l1, l2, k)?);
    }
    Ok(result)
}
