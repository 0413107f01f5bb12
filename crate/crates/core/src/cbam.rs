//! Convolutional block attention: a channel gate followed by a spatial gate,
//! and the attention fusion that gates low-level skip features before
//! concatenating them with resampled high-level features.
//!
//! Feature maps are `[n, c, h, w]` tensors; the batch axis is carried through
//! unchanged.

use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, ParamStore, TensorError, Var};

use crate::nn::{Conv2d, Init};
use crate::{Error, Result};

pub const DEFAULT_REDUCTION: usize = 16;
pub const SPATIAL_KERNEL: usize = 7;

/// Parameters of one attention block.
#[derive(Clone, Debug)]
pub struct CbamParams {
    pub channels: usize,
    pub reduction: usize,
    /// Shared MLP as two 1×1 convolutions, `C → C/r → C`.
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    /// `2 → 1` convolution over `[mean; max]` channel descriptors.
    pub spatial: Conv2d,
}

impl CbamParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if reduction == 0 || channels == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidConfig(format!(
                "{name}: reduction ratio {reduction} must divide channel count {channels}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            channels,
            reduction,
            fc1: Conv2d::new(
                store,
                &format!("{name}.fc1"),
                channels,
                hidden,
                1,
                1,
                true,
                Init::FanIn,
                rng,
            )?,
            fc2: Conv2d::new(
                store,
                &format!("{name}.fc2"),
                hidden,
                channels,
                1,
                1,
                true,
                Init::FanIn,
                rng,
            )?,
            spatial: Conv2d::new(
                store,
                &format!("{name}.spatial"),
                2,
                1,
                SPATIAL_KERNEL,
                1,
                true,
                Init::FanIn,
                rng,
            )?,
        })
    }

    /// Every parameter id, for tests and parameter surgery.
    pub fn param_ids(&self) -> Vec<scd_autograd::ParamId> {
        [&self.fc1, &self.fc2, &self.spatial]
            .iter()
            .flat_map(|c| std::iter::once(c.weight).chain(c.bias))
            .collect()
    }

    fn check_channels(&self, x: &Var) -> Result<()> {
        let (_, c, _, _) = x.value().dims4()?;
        if c != self.channels {
            return Err(shape_error("cbam", x.shape(), &[self.channels]));
        }
        Ok(())
    }

    fn mlp(&self, v: &Var, b: &Binding) -> Result<Var> {
        self.fc2.forward(&self.fc1.forward(v, b)?.relu(), b)
    }
}

fn shape_error(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Tensor(TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// `M_c = σ(MLP(avgpool x) + MLP(maxpool x))`, shape `[n, c, 1, 1]`.
pub fn channel_attention(x: &Var, p: &CbamParams, b: &Binding) -> Result<Var> {
    p.check_channels(x)?;
    let avg = x.mean_dims(&[2, 3])?;
    let max = x.max_dims(&[2, 3])?;
    Ok(p.mlp(&avg, b)?.add(&p.mlp(&max, b)?)?.sigmoid())
}

/// `x ⊙ M_c` broadcast over positions.
pub fn apply_channel(x: &Var, m: &Var) -> Result<Var> {
    let (n, c, _, _) = x.value().dims4()?;
    if m.shape() != [n, c, 1, 1] {
        return Err(shape_error("apply_channel", x.shape(), m.shape()));
    }
    Ok(x.mul(m)?)
}

/// `M_s = σ(conv7×7([mean_c x; max_c x]))`, shape `[n, 1, h, w]`.
pub fn spatial_attention(x: &Var, p: &CbamParams, b: &Binding) -> Result<Var> {
    x.value().dims4()?;
    let desc = Var::concat(&[&x.mean_dims(&[1])?, &x.max_dims(&[1])?], 1)?;
    Ok(p.spatial.forward(&desc, b)?.sigmoid())
}

/// `x ⊙ M_s` broadcast over channels.
pub fn apply_spatial(x: &Var, m: &Var) -> Result<Var> {
    let (n, _, h, w) = x.value().dims4()?;
    if m.shape() != [n, 1, h, w] {
        return Err(shape_error("apply_spatial", x.shape(), m.shape()));
    }
    Ok(x.mul(m)?)
}

/// Gate behaviour of a fusion. `Identity` fixes both maps to one, which
/// reduces the fusion to plain skip concatenation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateMode {
    #[default]
    Learned,
    Identity,
}

/// Fusion result; the maps are kept for inspection when gates are learned.
#[derive(Clone)]
pub struct Fused {
    pub output: Var,
    pub channel_map: Option<Var>,
    pub spatial_map: Option<Var>,
}

/// Gates `x_low` with maps computed from itself (channel first, then spatial
/// on the channel-gated map), resamples `x_high` to `x_low`'s grid, and
/// returns `[x_high; x_low_att]` along channels.
pub fn attention_fuse(
    x_low: &Var,
    x_high: &Var,
    p: &CbamParams,
    mode: GateMode,
    b: &Binding,
) -> Result<Fused> {
    let (n, _, h, w) = x_low.value().dims4()?;
    let (nh, _, _, _) = x_high.value().dims4()?;
    if n != nh {
        return Err(shape_error("attention_fuse", x_low.shape(), x_high.shape()));
    }
    p.check_channels(x_low)?;
    let high = x_high.resize_bilinear(h, w)?;
    let (low, channel_map, spatial_map) = match mode {
        GateMode::Identity => (x_low.clone(), None, None),
        GateMode::Learned => {
            let mc = channel_attention(x_low, p, b)?;
            let gated = apply_channel(x_low, &mc)?;
            let ms = spatial_attention(&gated, p, b)?;
            (apply_spatial(&gated, &ms)?, Some(mc), Some(ms))
        }
    };
    Ok(Fused {
        output: Var::concat(&[&high, &low], 1)?,
        channel_map,
        spatial_map,
    })
}
