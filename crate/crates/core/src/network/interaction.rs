use rand_chacha::ChaCha8Rng;
use scd_autograd::{Binding, ParamId, ParamStore, Tensor, Var};

use crate::nn::uniform;
use crate::Result;

/// Multi-head self-attention over the joint token sequence of the three
/// streams, with a residual connection. Tokens are the spatial positions of
/// one feature scale.
#[derive(Clone, Debug)]
pub struct Interaction {
    pub channels: usize,
    pub heads: usize,
    /// `(weight [c, c], bias [c])` for query, key, value and output.
    proj: [(ParamId, ParamId); 4],
}

/// Result of [`Interaction::forward`]; `weights` is `[n·heads, t, t]` with
/// `t = 3·h·w`.
pub struct Interacted {
    pub streams: [Var; 3],
    pub weights: Var,
}

impl Interaction {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut proj = Vec::with_capacity(4);
        for p in ["q", "k", "v", "o"] {
            let w = store.add(
                format!("{name}.{p}.weight"),
                uniform(rng, &[channels, channels], bound),
                true,
            )?;
            let b = store.add(
                format!("{name}.{p}.bias"),
                Tensor::zeros(&[1, channels]),
                true,
            )?;
            proj.push((w, b));
        }
        Ok(Self {
            channels,
            heads,
            proj: proj
                .try_into()
                .unwrap_or_else(|_| unreachable!("four projections")),
        })
    }

    fn project(&self, i: usize, x: &Var, b: &Binding) -> Result<Var> {
        let (w, bias) = self.proj[i];
        Ok(x.matmul(&b.var(w))?
            .add(&b.var(bias).reshape(&[1, 1, self.channels])?)?)
    }

    /// `[n, t, c] → [n·heads, t, c/heads]`.
    fn split_heads(&self, x: &Var, n: usize, t: usize) -> Result<Var> {
        let d = self.channels / self.heads;
        Ok(x.reshape(&[n, t, self.heads, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n * self.heads, t, d])?)
    }

    pub fn forward(&self, streams: [&Var; 3], b: &Binding) -> Result<Interacted> {
        let (n, c, h, w) = streams[0].value().dims4()?;
        let hw = h * w;
        let t = 3 * hw;
        let tokens = streams
            .iter()
            .map(|s| Ok(s.reshape(&[n, c, hw])?.permute(&[0, 2, 1])?))
            .collect::<Result<Vec<_>>>()?;
        let x = Var::concat(&tokens.iter().collect::<Vec<_>>(), 1)?;
        let d = c / self.heads;
        let q = self.split_heads(&self.project(0, &x, b)?, n, t)?;
        let k = self.split_heads(&self.project(1, &x, b)?, n, t)?;
        let v = self.split_heads(&self.project(2, &x, b)?, n, t)?;
        let scores = q
            .matmul(&k.permute(&[0, 2, 1])?)?
            .scale(1.0 / (d as f64).sqrt());
        let weights = scores.softmax(2)?;
        let attended = weights
            .matmul(&v)?
            .reshape(&[n, self.heads, t, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n, t, c])?;
        let y = x.add(&self.project(3, &attended, b)?)?;
        let split = |i: usize| -> Result<Var> {
            Ok(y.narrow(1, i * hw, hw)?
                .permute(&[0, 2, 1])?
                .reshape(&[n, c, h, w])?)
        };
        Ok(Interacted {
            streams: [split(0)?, split(1)?, split(2)?],
            weights,
        })
    }
}
