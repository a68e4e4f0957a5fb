//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! The tape is define-by-run: pushing an op evaluates it eagerly and records
//! what backward needs. Arithmetic is generic over [`Real`] so the same graph
//! code runs in `f32` (the production precision) and in `f64` (used by the
//! finite-difference gradient oracle in tests).

mod checkpoint;
mod fd;
mod store;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use fd::finite_difference_gradient;
pub use store::{Block, GradMap, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::{Real, Tensor};
