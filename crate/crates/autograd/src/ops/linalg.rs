use crate::{Result, Tensor, TensorError, Var};

/// A strided matrix operand: `(data, row_stride, col_stride)`.
pub(crate) type MatRef<'a> = (&'a [f64], usize, usize);

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n` and row-major `c: m×n`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the operand extents are checked by the callers' shape logic and
    // re-checked below in debug builds; `c` is exclusively borrowed.
    debug_assert!(a.0.len() > (m - 1) * a.1 + (k - 1) * a.2);
    debug_assert!(b.0.len() > (k - 1) * b.1 + (n - 1) * b.2);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Var {
    /// Batched matrix product `[.., m, k] × [.., k, n]`. The right operand may
    /// also be a plain `k × n` matrix shared by every batch entry.
    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_rhs = sb.len() == 2;
        if k != k2 || (!shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(mismatch());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);

        let a = self.shared_value();
        let b = rhs.shared_value();
        let mut y = vec![0.0; batch * m * n];
        if shared_rhs {
            gemm(
                batch * m,
                k,
                n,
                (a.data(), k, 1),
                (b.data(), n, 1),
                0.0,
                &mut y,
            );
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    (&a.data()[i * m * k..], k, 1),
                    (&b.data()[i * k * n..], n, 1),
                    0.0,
                    &mut y[i * m * n..],
                );
            }
        }
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Var::from_op(
            Tensor::from_parts(out_shape, y),
            &[self, rhs],
            Box::new(move |g| {
                let gd = g.data();
                let ga = ra.then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    if shared_rhs {
                        gemm(batch * m, n, k, (gd, n, 1), (b.data(), 1, n), 0.0, &mut ga);
                    } else {
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                (&gd[i * m * n..], n, 1),
                                (&b.data()[i * k * n..], 1, n),
                                0.0,
                                &mut ga[i * m * k..],
                            );
                        }
                    }
                    Tensor::from_parts(a.shape().to_vec(), ga)
                });
                let gb = rb.then(|| {
                    let mut gb = vec![0.0; b.numel()];
                    if shared_rhs {
                        gemm(k, batch * m, n, (a.data(), 1, k), (gd, n, 1), 0.0, &mut gb);
                    } else {
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                (&a.data()[i * m * k..], 1, k),
                                (&gd[i * m * n..], n, 1),
                                0.0,
                                &mut gb[i * k * n..],
                            );
                        }
                    }
                    Tensor::from_parts(b.shape().to_vec(), gb)
                });
                vec![ga, gb]
            }),
        ))
    }
}
