//! Parameterised building blocks shared by the attention blocks and the network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, ParamId, ParamStore, Tensor, Var};

use crate::Result;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, suited to ReLU stacks.
    KaimingUniform,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn,
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// 2-D convolution with square kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = (c_in * k * k) as f64;
        let bound = match init {
            Init::KaimingUniform => (6.0 / fan_in).sqrt(),
            Init::FanIn => 1.0 / fan_in.sqrt(),
        };
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[c_out, c_in, k, k], bound),
            true,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        })
    }

    pub fn forward(&self, x: &Var, b: &Binding) -> Result<Var> {
        let w = b.var(self.weight);
        let bias = self.bias.map(|id| b.var(id));
        Ok(x.conv2d(&w, bias.as_ref(), self.stride, self.pad)?)
    }
}

/// Batch normalisation over `[n, c, h, w]`. Batch statistics are used when
/// the binding records gradients, running statistics otherwise.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c]), true)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c]), true)?,
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?,
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[c]), false)?,
        })
    }

    pub fn forward(&self, x: &Var, b: &Binding) -> Result<Var> {
        let (gamma, beta) = (b.var(self.gamma), b.var(self.beta));
        if b.grad_enabled() {
            let (y, stats) = x.batch_norm_train(&gamma, &beta, BN_EPS)?;
            let blend = |old: &Tensor, new: &Tensor| {
                old.zip_map(new, |o, n| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n)
            };
            b.queue_update(
                self.running_mean,
                blend(b.buffer(self.running_mean), &stats.mean),
            );
            b.queue_update(
                self.running_var,
                blend(b.buffer(self.running_var), &stats.var),
            );
            Ok(y)
        } else {
            Ok(x.batch_norm_eval(
                &gamma,
                &beta,
                b.buffer(self.running_mean),
                b.buffer(self.running_var),
                BN_EPS,
            )?)
        }
    }
}

/// Conv, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                c_in,
                c_out,
                k,
                stride,
                false,
                Init::KaimingUniform,
                rng,
            )?,
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward(&self, x: &Var, b: &Binding) -> Result<Var> {
        Ok(self.bn.forward(&self.conv.forward(x, b)?, b)?.relu())
    }
}
