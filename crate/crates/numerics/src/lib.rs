//! Dense `f64` tensors, an eager reverse-mode tape, and Adam.
//!
//! Spatial ops take `[C, H, W]` or batched `[B, C, H, W]` values; sequence
//! ops take `[T, F]` or `[B, T, F]`.

mod adam;
mod conv;
mod error;
mod gemm;
pub mod gradcheck;
mod gru;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{NumericsError, Result};
pub use gradcheck::{grad_check, grad_check_at, relative_error};
pub use tape::{Padding, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;
