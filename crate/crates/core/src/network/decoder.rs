use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, ParamStore, Var};

use super::config::ModelConfig;
use super::encoder::MultiScaleFeatures;
use crate::cbam::{attention_fuse, CbamParams, Fused, GateMode};
use crate::nn::{Conv2d, ConvBnRelu, Init};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Per-pixel softmax over this many classes.
    Classes(usize),
    /// One sigmoid channel.
    Binary,
}

/// Starts from the stride-32 features and fuses stride 16, 8 and 4 skips in
/// turn, each fusion followed by a 3×3 conv block; the result is upsampled
/// ×4 and passed through a 1×1 head.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// One entry per fusion, or a single entry reused by all three.
    cbam: Vec<CbamParams>,
    blocks: Vec<ConvBnRelu>,
    head_conv: Conv2d,
    pub head: Head,
}

/// Probability map plus the gates of each fusion, coarse to fine.
pub struct Decoded {
    pub probs: Var,
    pub fusions: Vec<Fused>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        head: Head,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let ch = &cfg.encoder.stage_channels;
        let dec = &cfg.decoder.channels;
        let mut cbam = Vec::new();
        if cfg.cbam.enabled {
            let fusions = if cfg.cbam.share_across_stages { 1 } else { 3 };
            for j in 0..fusions {
                let c_low = ch[3 - j];
                cbam.push(CbamParams::new(
                    store,
                    &format!("{name}.cbam{j}"),
                    c_low,
                    cfg.cbam.reduction,
                    rng,
                )?);
            }
        }
        let mut blocks = Vec::with_capacity(3);
        let mut c_high = ch[4];
        for j in 0..3 {
            let c_low = ch[3 - j];
            blocks.push(ConvBnRelu::new(
                store,
                &format!("{name}.fuse{j}"),
                c_high + c_low,
                dec[j],
                3,
                1,
                rng,
            )?);
            c_high = dec[j];
        }
        let out = match head {
            Head::Classes(k) => k,
            Head::Binary => 1,
        };
        let head_conv = Conv2d::new(
            store,
            &format!("{name}.head"),
            dec[2],
            out,
            1,
            1,
            true,
            Init::FanIn,
            rng,
        )?;
        Ok(Self {
            cbam,
            blocks,
            head_conv,
            head,
        })
    }

    pub fn forward(
        &self,
        feats: &MultiScaleFeatures,
        out_hw: (usize, usize),
        mode: GateMode,
        b: &Binding,
    ) -> Result<Decoded> {
        let mut x = feats.stages[3].clone();
        let mut fusions = Vec::with_capacity(3);
        for j in 0..3 {
            let low = &feats.stages[2 - j];
            let fused = match self.cbam.get(j).or(self.cbam.first()) {
                Some(p) => attention_fuse(low, &x, p, mode, b)?,
                None => {
                    let (_, _, h, w) = low.value().dims4()?;
                    Fused {
                        output: Var::concat(&[&x.resize_bilinear(h, w)?, low], 1)?,
                        channel_map: None,
                        spatial_map: None,
                    }
                }
            };
            x = self.blocks[j].forward(&fused.output, b)?;
            fusions.push(fused);
        }
        let logits = self
            .head_conv
            .forward(&x.resize_bilinear(out_hw.0, out_hw.1)?, b)?;
        let probs = match self.head {
            Head::Classes(_) => logits.softmax(1)?,
            Head::Binary => logits.sigmoid(),
        };
        Ok(Decoded { probs, fusions })
    }
}
