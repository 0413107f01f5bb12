use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, ParamStore, Var};

use super::config::EncoderConfig;
use crate::nn::{BatchNorm2d, Conv2d, ConvBnRelu, Init};
use crate::Result;

/// Features at strides 4, 8, 16 and 32.
#[derive(Clone)]
pub struct MultiScaleFeatures {
    pub stages: [Var; 4],
}

impl MultiScaleFeatures {
    pub fn shapes(&self) -> [Vec<usize>; 4] {
        self.stages.clone().map(|v| v.shape().to_vec())
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: ConvBnRelu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let downsample = if stride != 1 || c_in != c_out {
            Some((
                Conv2d::new(
                    store,
                    &format!("{name}.down.conv"),
                    c_in,
                    c_out,
                    1,
                    stride,
                    false,
                    Init::KaimingUniform,
                    rng,
                )?,
                BatchNorm2d::new(store, &format!("{name}.down.bn"), c_out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: ConvBnRelu::new(store, &format!("{name}.conv1"), c_in, c_out, 3, stride, rng)?,
            conv2: Conv2d::new(
                store,
                &format!("{name}.conv2"),
                c_out,
                c_out,
                3,
                1,
                false,
                Init::KaimingUniform,
                rng,
            )?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), c_out)?,
            downsample,
        })
    }

    fn forward(&self, x: &Var, b: &Binding) -> Result<Var> {
        let y = self
            .bn2
            .forward(&self.conv2.forward(&self.conv1.forward(x, b)?, b)?, b)?;
        let skip = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x, b)?, b)?,
            None => x.clone(),
        };
        Ok(y.add(&skip)?.relu())
    }
}

/// Residual backbone: 7×7 stride-2 stem, 3×3 stride-2 max pool, then four
/// stages of basic blocks, the last three opening with a stride-2 block.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: ConvBnRelu,
    stages: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let ch = &cfg.stage_channels;
        let stem = ConvBnRelu::new(store, &format!("{name}.stem"), 3, ch[0], 7, 2, rng)?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let blocks = (0..cfg.stage_blocks[s])
                .map(|i| {
                    let (c_in, stride) = if i == 0 {
                        (ch[s], if s == 0 { 1 } else { 2 })
                    } else {
                        (ch[s + 1], 1)
                    };
                    BasicBlock::new(
                        store,
                        &format!("{name}.layer{}.{i}", s + 1),
                        c_in,
                        ch[s + 1],
                        stride,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        Ok(Self { stem, stages })
    }

    /// `image` is `[n, 3, h, w]` with `h`, `w` divisible by 32.
    pub fn forward(&self, image: &Var, b: &Binding) -> Result<MultiScaleFeatures> {
        let mut x = self.stem.forward(image, b)?.max_pool2d(3, 2, 1)?;
        let mut out = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x, b)?;
            }
            out.push(x.clone());
        }
        let stages: [Var; 4] = out
            .try_into()
            .unwrap_or_else(|_| unreachable!("four stages"));
        Ok(MultiScaleFeatures { stages })
    }
}

/// Third encoder: per stage, `[f_t1; f_t2; |f_t1 − f_t2|]` through a 3×3
/// conv block back to the stage width.
#[derive(Clone, Debug)]
pub struct ChangeEncoder {
    stages: Vec<ConvBnRelu>,
}

impl ChangeEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let stages = (0..4)
            .map(|s| {
                let c = cfg.stage_channels[s + 1];
                ConvBnRelu::new(
                    store,
                    &format!("{name}.stage{}", s + 1),
                    3 * c,
                    c,
                    3,
                    1,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    pub fn forward(
        &self,
        f1: &MultiScaleFeatures,
        f2: &MultiScaleFeatures,
        b: &Binding,
    ) -> Result<MultiScaleFeatures> {
        let mut out = Vec::with_capacity(4);
        for (s, block) in self.stages.iter().enumerate() {
            out.push(block.forward(&change_input(&f1.stages[s], &f2.stages[s])?, b)?);
        }
        let stages: [Var; 4] = out
            .try_into()
            .unwrap_or_else(|_| unreachable!("four stages"));
        Ok(MultiScaleFeatures { stages })
    }
}

/// `[a; b; |a − b|]` along channels.
pub fn change_input(a: &Var, b: &Var) -> Result<Var> {
    let diff = a.sub(b)?;
    if diff.shape() != a.shape() {
        return Err(scd_autograd::TensorError::ShapeMismatch {
            op: "change_input",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(Var::concat(&[a, b, &diff.abs()], 1)?)
}
