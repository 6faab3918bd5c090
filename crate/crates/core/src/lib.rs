//! Feature-space uncertainty augmentation for long-tailed classification.
//!
//! The crate trains a small feed-forward classifier while estimating, on the
//! fly, the direction in feature space along which the training features vary
//! the least (the smallest-eigenvalue direction of the feature covariance).
//! Tail-class features are then jittered along that direction during training,
//! which measurably flattens the per-class accuracy drop when the evaluation
//! features themselves drift off the training manifold.
//!
//! Modules, roughly bottom-up:
//!
//! * [`linalg`] — dense symmetric matrices and a Jacobi eigensolver.
//! * [`manifold`] — covariance directions, manifold shifts, distance schedules.
//! * [`covstream`] — streaming covariance over training batches.
//! * [`augment`] — the orthogonal-noise operator and tail-class selection.
//! * [`model`] — a from-scratch MLP with manual gradients and SGD momentum.
//! * [`train`] — the training loop wiring covariance tracking into the model.
//! * [`eval`] — per-class accuracy under shifts and the robustness spread.
//! * [`data`] — synthetic long-tailed datasets and IDX image loading.
//! * [`cli`] — configuration and the experiment subcommands.

pub mod augment;
pub mod cli;
pub mod covstream;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod train;

pub use error::{Error, Result};
