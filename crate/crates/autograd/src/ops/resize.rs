use crate::{Result, Tensor, TensorError, Var};

/// Interpolation taps along one axis: `(lo, hi, weight_of_hi)` per output
/// coordinate, using half-pixel centres without corner alignment.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl Var {
    /// Bilinear resampling of `[n, c, h, w]` to `[n, c, out_h, out_w]`.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w) = self.value().dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "resize_bilinear",
                lhs: self.shape().to_vec(),
                rhs: vec![out_h, out_w],
            });
        }
        if (h, w) == (out_h, out_w) {
            return self.reshape(&[n, c, h, w]);
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let x = self.value().data();
        let planes = n * c;
        let mut y = vec![0.0; planes * out_h * out_w];
        for p in 0..planes {
            let src = &x[p * h * w..][..h * w];
            let dst = &mut y[p * out_h * out_w..][..out_h * out_w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bottom = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * out_w + ox] = top * (1.0 - ly) + bottom * ly;
                }
            }
        }
        Ok(Var::from_op(
            Tensor::from_parts(vec![n, c, out_h, out_w], y),
            &[self],
            Box::new(move |g| {
                let gd = g.data();
                let mut gx = vec![0.0; planes * h * w];
                for p in 0..planes {
                    let src = &gd[p * out_h * out_w..][..out_h * out_w];
                    let dst = &mut gx[p * h * w..][..h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let v = src[oy * out_w + ox];
                            dst[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                            dst[y0 * w + x1] += v * (1.0 - ly) * lx;
                            dst[y1 * w + x0] += v * ly * (1.0 - lx);
                            dst[y1 * w + x1] += v * ly * lx;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, c, h, w], gx))]
            }),
        ))
    }
}
