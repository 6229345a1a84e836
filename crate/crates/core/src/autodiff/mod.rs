//! Minimal reverse-mode differentiation over dense 2-D buffers, with Adam
//! and Xavier initialisation.

mod init;
mod optim;
mod tape;
mod tensor;

pub use init::xavier_init;
pub use optim::{AdamConfig, AdamState};
pub use tape::{Tape, Var, PROB_EPS, SIGMOID_CLAMP};
pub use tensor::{ParamId, ParamStore, Tensor};

pub(crate) use tape::matmul_raw;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("gather with no indices")]
    EmptyGather,
    #[error("loss must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("backward already ran on this tape; rebuild the forward pass")]
    TapeConsumed,
    #[error("leaky relu slope must lie in (0, 1), got {0}")]
    InvalidSlope(f64),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}
