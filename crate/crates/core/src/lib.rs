//! Desk-scale laboratory for transferring compositional-generalization
//! inductive bias between sequence-to-sequence semantic-parsing tasks.
//!
//! The pipeline: [`data`] builds corpora (a SCAN-style command grammar,
//! lexicon-variant rewrites, TSV IO), [`splits`] carves them into
//! compositional train/test splits by maximizing compound divergence,
//! [`model`] defines a small transformer encoder–decoder whose parameters
//! partition into encoder-side θ and decoder-side φ, [`grad`] supplies
//! reverse-mode differentiation, [`train`] runs the alternating
//! pre-finetuning schedules and fine-tuning, and [`eval`] scores exact-match
//! accuracy.

pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod model;
pub mod seeding;
pub mod splits;
pub mod train;

pub use error::{Error, Result};
pub use grad::{finite_difference_gradient, Block, GradMap, ParamStore, Tensor};
pub use model::ModelConfig;
pub use train::{DuelConfig, FinetuneConfig, TrainConfig};
