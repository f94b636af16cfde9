//! Reverse-mode automatic differentiation over dense tensors.

mod error;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, gradient_check_many, GradCheckReport};
pub use ops::{BinaryKind, ReduceKind, UnaryKind};
pub(crate) use ops::unary_apply;
pub use tape::{BackwardCtx, BackwardRule, Gradients, ParamKey, Tape, Var};
pub use tensor::{numel, Tensor};
