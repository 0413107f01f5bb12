use std::sync::Arc;

use super::elementwise::{expand, reduce_to};
use crate::tensor::{strides, walk_offsets};
use crate::{Result, Tensor, TensorError, Var};

fn reduced_shape(op: &'static str, shape: &[usize], dims: &[usize]) -> Result<Vec<usize>> {
    let mut out = shape.to_vec();
    for &d in dims {
        if d >= shape.len() {
            return Err(TensorError::Axis {
                op,
                axis: d,
                shape: shape.to_vec(),
            });
        }
        out[d] = 1;
    }
    Ok(out)
}

/// `(outer, n, inner)` view of `shape` around axis `dim`.
pub(crate) fn split_at_axis(shape: &[usize], dim: usize) -> (usize, usize, usize) {
    let outer = shape[..dim].iter().product();
    let inner = shape[dim + 1..].iter().product();
    (outer, shape[dim], inner)
}

impl Var {
    /// Sum over every element, giving a rank-0 tensor.
    pub fn sum_all(&self) -> Var {
        let shape = self.shape().to_vec();
        let y = Tensor::scalar(self.value().sum());
        Var::from_op(
            y,
            &[self],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().numel().max(1) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `dims`, keeping them as size-1 axes.
    pub fn sum_dims(&self, dims: &[usize]) -> Result<Var> {
        let out_shape = reduced_shape("sum_dims", self.shape(), dims)?;
        let y = reduce_to(self.value(), &out_shape);
        let in_shape = self.shape().to_vec();
        Ok(Var::from_op(
            y,
            &[self],
            Box::new(move |g| vec![Some(expand(g, &in_shape))]),
        ))
    }

    pub fn mean_dims(&self, dims: &[usize]) -> Result<Var> {
        let count: usize = dims
            .iter()
            .map(|&d| self.shape().get(d).copied().unwrap_or(1))
            .product();
        Ok(self.sum_dims(dims)?.scale(1.0 / count.max(1) as f64))
    }

    /// Maximum over `dims`, keeping them as size-1 axes. The gradient goes to
    /// the first maximal element.
    pub fn max_dims(&self, dims: &[usize]) -> Result<Var> {
        let out_shape = reduced_shape("max_dims", self.shape(), dims)?;
        let in_shape = self.shape().to_vec();
        let out_strides: Vec<usize> = strides(&out_shape)
            .into_iter()
            .zip(&out_shape)
            .zip(&in_shape)
            .map(|((s, &o), &i)| if o == i { s } else { 0 })
            .collect();
        let n_out: usize = out_shape.iter().product();
        let mut best = vec![f64::NEG_INFINITY; n_out];
        let mut arg = vec![usize::MAX; n_out];
        let x = self.value().data();
        walk_offsets(&in_shape, &out_strides, |flat, off| {
            if arg[off] == usize::MAX || x[flat] > best[off] {
                best[off] = x[flat];
                arg[off] = flat;
            }
        });
        let y = Tensor::from_parts(out_shape, best);
        Ok(Var::from_op(
            y,
            &[self],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&in_shape);
                let d = gx.data_mut();
                for (o, &src) in arg.iter().enumerate() {
                    d[src] += g.data()[o];
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Softmax along axis `dim`.
    pub fn softmax(&self, dim: usize) -> Result<Var> {
        if dim >= self.shape().len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis: dim,
                shape: self.shape().to_vec(),
            });
        }
        let (outer, n, inner) = split_at_axis(self.shape(), dim);
        let x = self.value().data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    m = m.max(x[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    let e = (x[base + j * inner] - m).exp();
                    y[base + j * inner] = e;
                    s += e;
                }
                for j in 0..n {
                    y[base + j * inner] /= s;
                }
            }
        }
        let y = Arc::new(Tensor::from_parts(self.shape().to_vec(), y));
        let yc = Arc::clone(&y);
        Ok(Var::from_op_shared(
            y,
            &[self],
            Box::new(move |g| {
                let (gd, yd) = (g.data(), yc.data());
                let mut gx = vec![0.0; gd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n)
                            .map(|j| gd[base + j * inner] * yd[base + j * inner])
                            .sum();
                        for j in 0..n {
                            let k = base + j * inner;
                            gx[k] = yd[k] * (gd[k] - dot);
                        }
                    }
                }
                vec![Some(Tensor::from_parts(g.shape().to_vec(), gx))]
            }),
        ))
    }
}
