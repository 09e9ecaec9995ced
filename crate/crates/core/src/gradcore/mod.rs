//! Dense f64 arrays with tape-based reverse-mode differentiation and Adam.
//!
//! A [`Tape`] records every operation applied to its nodes. Calling
//! [`Tape::backward`] on a scalar node walks the record in exact reverse order
//! and returns a [`Gradients`] set for every leaf marked as trainable. The tape
//! is cleared afterwards so it can be reused for the next step.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
