use std::sync::Arc;

use crate::{Result, Tensor, TensorError, Var};

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance, as folded into running estimates.
    pub var: Tensor,
}

fn check_affine(
    op: &'static str,
    x: &Var,
    gamma: &Var,
    beta: &Var,
) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.value().dims4()?;
    for p in [gamma, beta] {
        if p.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: x.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    Ok((n, c, h * w))
}

/// Visits every element of channel `ch` in an `[n, c, hw]` layout.
#[inline]
fn channel_indices(n: usize, c: usize, hw: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |b| {
        let base = (b * c + ch) * hw;
        base..base + hw
    })
}

impl Var {
    /// Batch normalisation with statistics of the current batch.
    pub fn batch_norm_train(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, hw) = check_affine("batch_norm", self, gamma, beta)?;
        let m = (n * hw) as f64;
        let x = self.value().data();
        let (gv, bv) = (gamma.value().data(), beta.value().data());
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mu = channel_indices(n, c, hw, ch).map(|i| x[i]).sum::<f64>() / m;
            let v = channel_indices(n, c, hw, ch)
                .map(|i| (x[i] - mu).powi(2))
                .sum::<f64>()
                / m;
            let inv = 1.0 / (v + eps).sqrt();
            for i in channel_indices(n, c, hw, ch) {
                xhat[i] = (x[i] - mu) * inv;
                y[i] = gv[ch] * xhat[i] + bv[ch];
            }
            mean[ch] = mu;
            var[ch] = if m > 1.0 { v * m / (m - 1.0) } else { v };
            inv_std[ch] = inv;
        }
        let stats = BatchStats {
            mean: Tensor::from_parts(vec![c], mean),
            var: Tensor::from_parts(vec![c], var),
        };
        let gamma_v = gamma.shared_value();
        let needs = [
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        ];
        let out = Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), y),
            &[self, gamma, beta],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = needs[0].then(|| vec![0.0; gd.len()]);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    for i in channel_indices(n, c, hw, ch) {
                        sg += gd[i];
                        sgx += gd[i] * xhat[i];
                    }
                    dgamma[ch] = sgx;
                    dbeta[ch] = sg;
                    if let Some(dx) = dx.as_mut() {
                        let k = gamma_v.data()[ch] * inv_std[ch] / m;
                        for i in channel_indices(n, c, hw, ch) {
                            dx[i] = k * (m * gd[i] - sg - xhat[i] * sgx);
                        }
                    }
                }
                vec![
                    dx.map(|d| Tensor::from_parts(g.shape().to_vec(), d)),
                    needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                    needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
                ]
            }),
        );
        Ok((out, stats))
    }

    /// Batch normalisation with fixed running statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var,
        beta: &Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f64,
    ) -> Result<Var> {
        let (n, c, hw) = check_affine("batch_norm", self, gamma, beta)?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm running stats",
                lhs: vec![c],
                rhs: running_mean.shape().to_vec(),
            });
        }
        let x = self.shared_value();
        let inv: Arc<Vec<f64>> = Arc::new(
            running_var
                .data()
                .iter()
                .map(|v| 1.0 / (v + eps).sqrt())
                .collect(),
        );
        let mean = running_mean.data().to_vec();
        let (gv, bv) = (gamma.value().data(), beta.value().data());
        let mut y = vec![0.0; x.numel()];
        for ch in 0..c {
            for i in channel_indices(n, c, hw, ch) {
                y[i] = gv[ch] * (x.data()[i] - mean[ch]) * inv[ch] + bv[ch];
            }
        }
        let gamma_v = gamma.shared_value();
        let needs = [
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        ];
        Ok(Var::from_op(
            Tensor::from_parts(self.shape().to_vec(), y),
            &[self, gamma, beta],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = needs[0].then(|| vec![0.0; gd.len()]);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for i in channel_indices(n, c, hw, ch) {
                        dgamma[ch] += gd[i] * (x.data()[i] - mean[ch]) * inv[ch];
                        dbeta[ch] += gd[i];
                        if let Some(dx) = dx.as_mut() {
                            dx[i] = gd[i] * gamma_v.data()[ch] * inv[ch];
                        }
                    }
                }
                vec![
                    dx.map(|d| Tensor::from_parts(g.shape().to_vec(), d)),
                    needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                    needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
                ]
            }),
        ))
    }
}
