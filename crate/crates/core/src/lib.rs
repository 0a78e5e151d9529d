//! Convolutional network training and evaluation engine for leaf-disease
//! image classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: rank-4 tensors and the forward/backward layer primitives.
//! - [`model`]: declarative layer graphs, the built-in architectures, and
//!   whole-model execution.
//! - [`data`]: directory-per-class ingestion, splitting, image operators and
//!   batching.
//! - [`metrics`]: confusion matrices, classification reports and ROC curves.
//! - [`train`]: the training loop, evaluation, prediction and checkpoints.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::{Mode, Padding, Shape, Tensor};
