//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations live on [`Var`], a reference-counted graph node. A node keeps
//! its parents only when one of them requires a gradient, so evaluation from
//! constants runs without retaining the graph.

pub mod gradcheck;
mod ops;
mod params;
mod tensor;
mod var;

pub use ops::elementwise::sigmoid;
pub use ops::norm::BatchStats;
pub use ops::resize::bilinear_taps;
pub use params::{Binding, Param, ParamId, ParamStore};
pub use tensor::Tensor;
pub use var::{Gradients, Var};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} invalid for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: no inputs")]
    Empty { op: &'static str },
    #[error("parameter {0:?} registered twice")]
    DuplicateParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
