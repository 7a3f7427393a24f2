//! Minimal dense tensors with a define-by-run reverse-mode tape.
//!
//! Every differentiable operation is a method on [`Tape`] that records its
//! output value together with a [`BackwardOp`]. Downstream crates add fused
//! domain operations by implementing [`BackwardOp`] and calling
//! [`Tape::record`].

pub mod branches;
mod element;
mod error;
pub mod fault;
mod gradcheck;
mod ops;
mod optim;
mod params;
pub mod rng;
mod schedule;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many, rel_error, GradCheckReport};
pub use ops::{broadcast_shape, BinaryFn, Conv2dGeometry, RowMix, UnaryFn};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Bound, Param, ParamId, ParamSet};
pub use rng::Rng;
pub use schedule::{PlateauSchedule, PolySchedule};
pub use tape::{BackwardOp, Gradients, Tape, Var};
pub use tensor::{strides, Tensor};
