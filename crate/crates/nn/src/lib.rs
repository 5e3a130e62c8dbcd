//! Minimal numerics for the assignment actor and pooled critic.
//!
//! Everything here is dense and CPU-only: a two-dimensional [`DenseArray`],
//! a single-use reverse-mode [`Tape`], masked categorical distributions,
//! and a named [`ParameterStore`] with Adam moments and a binary checkpoint
//! format.

pub mod array;
pub mod checkpoint;
pub mod dist;
pub mod error;
pub mod init;
pub mod optim;
pub mod real;
pub mod tape;

pub use array::{DenseArray, Shape};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use dist::{masked_log_softmax, MaskedCategorical};
pub use error::NnError;
pub use optim::{clip_global_norm, global_norm, AdamConfig, GradMap, ParameterStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};

pub type Result<T> = std::result::Result<T, NnError>;
