//! Reverse-mode automatic differentiation, the Adam optimizer and gradient
//! checking.

mod adam;
mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamState, Param};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, OpKind, Tape, Var};
pub(crate) use tape::check_decimation;
