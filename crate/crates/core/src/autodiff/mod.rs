//! Reverse-mode automatic differentiation over dense row-major tensors, with
//! the small op set the encoder, hash field, decoder and losses need, a
//! step-decay optimizer and the `SPCKPT` checkpoint format.

mod checkpoint;
pub mod gradcheck;
mod kernels;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use optim::{sgd_step, LrSchedule, OptimizerKind, SgdState};
pub use params::{Param, ParamId, ParamStore};
pub use real::Real;
pub use tape::{BilinearTap, Gradients, Tape, Var};
pub use tensor::{numel, Tensor};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
