use std::sync::Arc;

use crate::tensor::{strides, walk_offsets};
use crate::{Result, Tensor, TensorError, Var};

/// Output shape of a same-rank broadcast, where every dimension pair is
/// either equal or contains a 1.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

/// Strides of `shape` viewed inside `out_shape`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    strides(shape)
        .into_iter()
        .zip(shape.iter().zip(out_shape))
        .map(|(s, (&d, &o))| if d == o { s } else { 0 })
        .collect()
}

/// Gathers `t` broadcast to `out_shape`.
pub(crate) fn expand(t: &Tensor, out_shape: &[usize]) -> Tensor {
    if t.shape() == out_shape {
        return t.clone();
    }
    let st = broadcast_strides(t.shape(), out_shape);
    let src = t.data();
    let mut data = vec![0.0; out_shape.iter().product()];
    walk_offsets(out_shape, &st, |flat, off| data[flat] = src[off]);
    Tensor::from_parts(out_shape.to_vec(), data)
}

/// Sums `g` over the axes along which `shape` was broadcast.
pub(crate) fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let st = broadcast_strides(shape, g.shape());
    let src = g.data();
    let mut data = vec![0.0; shape.iter().product()];
    walk_offsets(g.shape(), &st, |flat, off| data[off] += src[flat]);
    Tensor::from_parts(shape.to_vec(), data)
}

fn binary_forward(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let ea = expand(a, out_shape);
    let eb = expand(b, out_shape);
    ea.zip_map(&eb, f)
}

impl Var {
    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Var {
        let x = self.shared_value();
        let y = Arc::new(x.map(f));
        let yc = Arc::clone(&y);
        Var::from_op_shared(
            y,
            &[self],
            Box::new(move |g| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(yc.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
            }),
        )
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var {
        self.unary(|x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(|x| x + c, |_, _| 1.0)
    }

    pub fn relu(&self) -> Var {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Var {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Var {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Var {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Clamps into `[lo, hi]`; no gradient flows where the clamp is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    pub fn add(&self, rhs: &Var) -> Result<Var> {
        let out_shape = broadcast_shape("add", self.shape(), rhs.shape())?;
        let y = binary_forward(self.value(), rhs.value(), &out_shape, |a, b| a + b);
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Var::from_op(
            y,
            &[self, rhs],
            Box::new(move |g| vec![ra.then(|| reduce_to(g, &sa)), rb.then(|| reduce_to(g, &sb))]),
        ))
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var> {
        let out_shape = broadcast_shape("sub", self.shape(), rhs.shape())?;
        let y = binary_forward(self.value(), rhs.value(), &out_shape, |a, b| a - b);
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Var::from_op(
            y,
            &[self, rhs],
            Box::new(move |g| {
                vec![
                    ra.then(|| reduce_to(g, &sa)),
                    rb.then(|| reduce_to(&g.map(|v| -v), &sb)),
                ]
            }),
        ))
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        let out_shape = broadcast_shape("mul", self.shape(), rhs.shape())?;
        let y = binary_forward(self.value(), rhs.value(), &out_shape, |a, b| a * b);
        let (a, b) = (self.shared_value(), rhs.shared_value());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Var::from_op(
            y,
            &[self, rhs],
            Box::new(move |g| {
                let ga = ra.then(|| {
                    let eb = expand(&b, g.shape());
                    reduce_to(&g.zip_map(&eb, |g, b| g * b), a.shape())
                });
                let gb = rb.then(|| {
                    let ea = expand(&a, g.shape());
                    reduce_to(&g.zip_map(&ea, |g, a| g * a), b.shape())
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn div(&self, rhs: &Var) -> Result<Var> {
        let out_shape = broadcast_shape("div", self.shape(), rhs.shape())?;
        let y = binary_forward(self.value(), rhs.value(), &out_shape, |a, b| a / b);
        let (a, b) = (self.shared_value(), rhs.shared_value());
        let (ra, rb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Var::from_op(
            y,
            &[self, rhs],
            Box::new(move |g| {
                let eb = expand(&b, g.shape());
                let ga = ra.then(|| reduce_to(&g.zip_map(&eb, |g, b| g / b), a.shape()));
                let gb = rb.then(|| {
                    let ea = expand(&a, g.shape());
                    let t = Tensor::from_fn(g.shape(), |i| {
                        -g.data()[i] * ea.data()[i] / (eb.data()[i] * eb.data()[i])
                    });
                    reduce_to(&t, b.shape())
                });
                vec![ga, gb]
            }),
        ))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
