use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cbam::DEFAULT_REDUCTION;
use crate::{Error, Result};

/// Cumulative downsampling after the stem convolution and each residual stage.
pub const STAGE_STRIDES: [usize; 5] = [2, 4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Stem width followed by the four residual stage widths.
    pub stage_channels: Vec<usize>,
    /// Basic blocks per residual stage; `[3, 4, 6, 3]` is the 34-layer layout.
    pub stage_blocks: Vec<usize>,
    /// Checkpoint whose `encoder.*` tensors initialise the shared encoder.
    pub pretrained: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![64, 64, 128, 256, 512],
            stage_blocks: vec![3, 4, 6, 3],
            pretrained: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbamConfig {
    /// When off, every skip fusion is plain concatenation.
    pub enabled: bool,
    pub reduction: usize,
    /// One attention block per decoder for all three fusions instead of one
    /// per fusion. Needs equal widths for the first three encoder stages.
    pub share_across_stages: bool,
}

impl Default for CbamConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            reduction: DEFAULT_REDUCTION,
            share_across_stages: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    pub enabled: bool,
    pub heads: usize,
    /// Feature stride whose tokens attend to each other: 4, 8, 16 or 32.
    pub token_stride: usize,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            heads: 4,
            token_stride: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Output widths of the three fusion stages, coarse to fine.
    pub channels: Vec<usize>,
    /// Both dates use one semantic decoder.
    pub share_semantic: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            channels: vec![256, 128, 64],
            share_semantic: true,
        }
    }
}

/// Per-channel input standardisation applied after scaling to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub encoder: EncoderConfig,
    pub cbam: CbamConfig,
    pub interaction: InteractionConfig,
    pub decoder: DecoderConfig,
    pub normalization: Option<Normalization>,
    /// Seeds parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            encoder: EncoderConfig::default(),
            cbam: CbamConfig::default(),
            interaction: InteractionConfig::default(),
            decoder: DecoderConfig::default(),
            normalization: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A narrow configuration for quick experiments on small inputs.
    pub fn small(num_classes: usize) -> Self {
        Self {
            num_classes,
            encoder: EncoderConfig {
                stage_channels: vec![16, 16, 32, 64, 128],
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                channels: vec![64, 32, 32],
                ..DecoderConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(2..=254).contains(&self.num_classes) {
            return bad(format!(
                "model.num_classes must be in 2..=254, got {}",
                self.num_classes
            ));
        }
        let ch = &self.encoder.stage_channels;
        if ch.len() != 5 || ch.contains(&0) {
            return bad(format!(
                "model.encoder.stage_channels needs 5 positive widths, got {ch:?}"
            ));
        }
        let blocks = &self.encoder.stage_blocks;
        if blocks.len() != 4 || blocks.contains(&0) {
            return bad(format!(
                "model.encoder.stage_blocks needs 4 positive counts, got {blocks:?}"
            ));
        }
        let dec = &self.decoder.channels;
        if dec.len() != 3 || dec.contains(&0) {
            return bad(format!(
                "model.decoder.channels needs 3 positive widths, got {dec:?}"
            ));
        }
        if self.cbam.enabled {
            let r = self.cbam.reduction;
            if let Some(c) = ch[1..4].iter().find(|&&c| r == 0 || c % r != 0) {
                return bad(format!(
                    "model.cbam.reduction {r} must divide skip width {c}"
                ));
            }
            if self.cbam.share_across_stages && !(ch[1] == ch[2] && ch[2] == ch[3]) {
                return bad(format!(
                    "model.cbam.share_across_stages needs equal widths for stages 1-3, got {:?}",
                    &ch[1..4]
                ));
            }
        }
        if self.interaction.enabled {
            let Some(stage) = self.interaction_stage() else {
                return bad(format!(
                    "model.interaction.token_stride must be 4, 8, 16 or 32, got {}",
                    self.interaction.token_stride
                ));
            };
            let c = ch[stage + 1];
            let h = self.interaction.heads;
            if h == 0 || c % h != 0 {
                return bad(format!("model.interaction.heads {h} must divide width {c}"));
            }
        }
        if let Some(n) = &self.normalization {
            if n.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return bad("model.normalization.std must be positive".into());
            }
        }
        Ok(())
    }

    /// Index into `f1..f4` of the interacting scale.
    pub fn interaction_stage(&self) -> Option<usize> {
        STAGE_STRIDES[1..]
            .iter()
            .position(|&s| s == self.interaction.token_stride)
    }
}
