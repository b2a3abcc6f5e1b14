//! Dense `f64` numerics: matrices, attention kernels, a gradient tape, Adam,
//! and finite-difference checking.

mod gradcheck;
mod matrix;
mod optim;
pub mod ops;
mod store;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use matrix::Matrix;
pub use ops::{layer_norm, masked_softmax, relu, AttentionPlan, LN_EPS};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use store::ParamStore;
pub use tape::{Gradients, ParamId, Tape, Var};


#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("softmax over an empty mask")]
    EmptyMask,
    #[error("parameter {id} is not registered on the tape")]
    UnknownParam { id: usize },
    #[error("loss must be 1x1, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
}
