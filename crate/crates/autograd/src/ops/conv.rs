use super::linalg::gemm;
use crate::{Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(
        x: (usize, usize, usize, usize),
        k: (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let (n, c, h, w) = x;
        let (kh, kw) = k;
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(Self {
            n,
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Input coordinate for output coordinate `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let v = (o * self.stride + k).checked_sub(self.pad)?;
        (v < extent).then_some(v)
    }
}

/// Unfolds `x` into a `(c·kh·kw) × (n·ho·wo)` row-major matrix.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let ncol = g.cols();
    let mut cols = vec![0.0; g.rows() * ncol];
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * ncol..(row + 1) * ncol];
                for b in 0..g.n {
                    let plane = &x[(b * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ki, g.h) else {
                            continue;
                        };
                        let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                        let dst = &mut dst_row[(b * g.ho + oy) * g.wo..][..g.wo];
                        if g.stride == 1 && kj >= g.pad && kj - g.pad + g.wo <= g.w {
                            let start = kj - g.pad;
                            dst.copy_from_slice(&src_row[start..start + g.wo]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                if let Some(ix) = g.src(ox, kj, g.w) {
                                    *d = src_row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto the input grid.
fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let ncol = g.cols();
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * ncol..(row + 1) * ncol];
                for b in 0..g.n {
                    let plane = &mut x[(b * g.c + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        let Some(iy) = g.src(oy, ki, g.h) else {
                            continue;
                        };
                        let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                        let src = &src_row[(b * g.ho + oy) * g.wo..][..g.wo];
                        for (ox, &v) in src.iter().enumerate() {
                            if let Some(ix) = g.src(ox, kj, g.w) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Var {
    /// 2-D cross-correlation of `[n, c, h, w]` input with `[o, c, kh, kw]`
    /// weights, optional `[o]` bias, square stride and zero padding.
    pub fn conv2d(
        &self,
        weight: &Var,
        bias: Option<&Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let x_dims = self.value().dims4()?;
        let (o, wc, kh, kw) = weight.value().dims4()?;
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: self.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        };
        if wc != x_dims.1 {
            return Err(mismatch());
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![o],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let g = Geometry::new(x_dims, (kh, kw), stride, pad).ok_or_else(mismatch)?;
        let (rows, ncol, hw) = (g.rows(), g.cols(), g.ho * g.wo);

        let cols = im2col(self.value().data(), &g);
        let mut ymat = vec![0.0; o * ncol];
        gemm(
            o,
            rows,
            ncol,
            (weight.value().data(), rows, 1),
            (&cols, ncol, 1),
            0.0,
            &mut ymat,
        );

        let mut y = vec![0.0; g.n * o * hw];
        let bias_v = bias.map(|b| b.value().data().to_vec());
        for b in 0..g.n {
            for oc in 0..o {
                let src = &ymat[oc * ncol + b * hw..][..hw];
                let dst = &mut y[(b * o + oc) * hw..][..hw];
                let shift = bias_v.as_ref().map_or(0.0, |bv| bv[oc]);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + shift;
                }
            }
        }
        let out = Tensor::from_parts(vec![g.n, o, g.ho, g.wo], y);

        let need_x = self.requires_grad();
        let need_w = weight.requires_grad();
        let need_b = bias.is_some_and(|b| b.requires_grad());
        let w_val = weight.shared_value();
        // Columns are only needed for the weight gradient.
        let cols = need_w.then_some(cols);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        Ok(Var::from_op(
            out,
            &parents,
            Box::new(move |grad| {
                let gd = grad.data();
                let mut gmat = vec![0.0; o * ncol];
                for b in 0..g.n {
                    for oc in 0..o {
                        gmat[oc * ncol + b * hw..][..hw]
                            .copy_from_slice(&gd[(b * o + oc) * hw..][..hw]);
                    }
                }
                let gx = need_x.then(|| {
                    let mut dcols = vec![0.0; rows * ncol];
                    gemm(
                        rows,
                        o,
                        ncol,
                        (w_val.data(), 1, rows),
                        (&gmat, ncol, 1),
                        0.0,
                        &mut dcols,
                    );
                    Tensor::from_parts(vec![g.n, g.c, g.h, g.w], col2im(&dcols, &g))
                });
                let gw = need_w.then(|| {
                    let cols = cols.as_ref().expect("columns retained");
                    let mut dw = vec![0.0; o * rows];
                    gemm(
                        o,
                        ncol,
                        rows,
                        (&gmat, ncol, 1),
                        (cols, 1, ncol),
                        0.0,
                        &mut dw,
                    );
                    Tensor::from_parts(w_val.shape().to_vec(), dw)
                });
                let mut out = vec![gx, gw];
                if has_bias {
                    out.push(need_b.then(|| {
                        Tensor::from_parts(
                            vec![o],
                            (0..o)
                                .map(|oc| gmat[oc * ncol..][..ncol].iter().sum())
                                .collect(),
                        )
                    }));
                }
                out
            }),
        ))
    }

    /// Max pooling over `k × k` windows; padded cells never win.
    pub fn max_pool2d(&self, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let dims = self.value().dims4()?;
        let g =
            Geometry::new(dims, (k, k), stride, pad).ok_or_else(|| TensorError::ShapeMismatch {
                op: "max_pool2d",
                lhs: self.shape().to_vec(),
                rhs: vec![k, k],
            })?;
        let x = self.value().data();
        let planes = g.n * g.c;
        let mut y = vec![0.0; planes * g.ho * g.wo];
        let mut arg = vec![0usize; y.len()];
        for p in 0..planes {
            let base = p * g.h * g.w;
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ki in 0..k {
                        let Some(iy) = g.src(oy, ki, g.h) else {
                            continue;
                        };
                        for kj in 0..k {
                            let Some(ix) = g.src(ox, kj, g.w) else {
                                continue;
                            };
                            let i = base + iy * g.w + ix;
                            if best_i == usize::MAX || x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (p * g.ho + oy) * g.wo + ox;
                    y[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        let in_shape = self.shape().to_vec();
        Ok(Var::from_op(
            Tensor::from_parts(vec![g.n, g.c, g.ho, g.wo], y),
            &[self],
            Box::new(move |grad| {
                let mut gx = Tensor::zeros(&in_shape);
                let d = gx.data_mut();
                for (&src, &gv) in arg.iter().zip(grad.data()) {
                    d[src] += gv;
                }
                vec![Some(gx)]
            }),
        ))
    }
}
