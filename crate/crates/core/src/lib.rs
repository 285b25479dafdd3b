//! Set-to-set (S2S) deep metric learning for cross-view re-identification.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: tensors, layers with hand-written backward passes, and the
//!   part-based embedding network.
//! - [`loss`]: the class-identity, symmetric triplet, marginal pairwise and
//!   regularisation terms with analytic gradients, plus the adaptive
//!   direction weights.
//! - [`mining`]: set-structured mini-batches, random triplets and marginal
//!   (farthest positive / nearest negative) pairs.
//! - [`train`]: the S2S gradient descent loop.
//! - [`eval`]: ranking, CMC curves and mAP.
//! - [`data`]: datasets, file formats, synthetic data and the split protocol.
//! - [`experiment`]: desk-scale end-to-end runs.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod mining;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod view;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use view::View;
