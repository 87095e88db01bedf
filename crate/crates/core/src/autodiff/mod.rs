//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records a closed set of primitives; [`Tape::backward`]
//! accumulates gradients into a [`ParamStore`].

mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var, RMS_EPS};
pub use tensor::Tensor;
