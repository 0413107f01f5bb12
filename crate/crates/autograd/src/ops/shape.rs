use super::reduce::split_at_axis;
use crate::tensor::{strides, walk_offsets};
use crate::{Result, Tensor, TensorError, Var};

pub(crate) fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape()[p]).collect();
    let st: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = t.data();
    let mut data = vec![0.0; src.len()];
    walk_offsets(&out_shape, &st, |flat, off| data[flat] = src[off]);
    Tensor::from_parts(out_shape, data)
}

fn narrow_tensor(t: &Tensor, dim: usize, start: usize, len: usize) -> Tensor {
    let (outer, n, inner) = split_at_axis(t.shape(), dim);
    let src = t.data();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[dim] = len;
    Tensor::from_parts(shape, data)
}

impl Var {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let y = self.value().clone().reshape(shape)?;
        let in_shape = self.shape().to_vec();
        Ok(Var::from_op(
            y,
            &[self],
            Box::new(move |g| vec![Some(g.clone().reshape(&in_shape).expect("reshape grad"))]),
        ))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        let valid = perm.len() == rank
            && perm
                .iter()
                .all(|&p| p < rank && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::ShapeMismatch {
                op: "permute",
                lhs: self.shape().to_vec(),
                rhs: perm.to_vec(),
            });
        }
        let y = permute_tensor(self.value(), perm);
        let mut inverse = vec![0; rank];
        for (d, &p) in perm.iter().enumerate() {
            inverse[p] = d;
        }
        Ok(Var::from_op(
            y,
            &[self],
            Box::new(move |g| vec![Some(permute_tensor(g, &inverse))]),
        ))
    }

    /// Joins tensors along axis `dim`; all other axes must agree.
    pub fn concat(parts: &[&Var], dim: usize) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let rank = first.shape().len();
        if dim >= rank {
            return Err(TensorError::Axis {
                op: "concat",
                axis: dim,
                shape: first.shape().to_vec(),
            });
        }
        for p in parts {
            let compatible = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == dim || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[dim]).collect();
        let total: usize = sizes.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[dim] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, dim);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&sizes) {
                let src = p.value().data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let y = Tensor::from_parts(out_shape, data);
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Ok(Var::from_op(
            y,
            parts,
            Box::new(move |g| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(&needs)
                    .map(|(&len, &need)| {
                        let part = need.then(|| narrow_tensor(g, dim, start, len));
                        start += len;
                        part
                    })
                    .collect()
            }),
        ))
    }

    /// The slice `start..start + len` along axis `dim`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if dim >= shape.len() || start + len > shape[dim] {
            return Err(TensorError::Axis {
                op: "narrow",
                axis: dim,
                shape,
            });
        }
        let y = narrow_tensor(self.value(), dim, start, len);
        Ok(Var::from_op(
            y,
            &[self],
            Box::new(move |g| {
                let (outer, n, inner) = split_at_axis(&shape, dim);
                let mut gx = vec![0.0; shape.iter().product()];
                let gd = g.data();
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                vec![Some(Tensor::from_parts(shape.clone(), gx))]
            }),
        ))
    }
}
