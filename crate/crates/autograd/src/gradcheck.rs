//! Finite-difference helpers for checking analytic gradients.

use crate::Tensor;

/// Central difference of `f` with respect to element `index` of `x`.
pub fn central_difference(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    index: usize,
    h: f64,
) -> f64 {
    let mut probe = x.clone();
    let orig = probe.data()[index];
    probe.data_mut()[index] = orig + h;
    let up = f(&probe);
    probe.data_mut()[index] = orig - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps vanishing gradients from turning round-off into large
/// relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
