// Validation deliberately writes `!(x >= 0.0)` so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Adaptive online incremental learning for drifting data streams.
//!
//! The model is a memory-augmented autoencoder with shortcut connections
//! whose hidden activations are fused by a small self-attention head and
//! fed to a softmax classifier. Training is fully online (one pass, one
//! example at a time) with a composite loss: prediction cross-entropy,
//! reconstruction error, and an entropy penalty on the memory addressing
//! weights. A sliding-window loss monitor detects concept drift and reacts
//! by restoring the snapshotted shared (early) encoder layers while
//! reinitializing the private (deep) ones, and a small buffer of the
//! hardest recent examples is replayed periodically.
//!
//! Module map:
//! - [`linalg`]: matrices, vectors, activations, Adam.
//! - [`autoencoder`]: encoder/decoder with shortcut connections.
//! - [`memory`]: prototype memory with cosine addressing and hard shrinkage.
//! - [`fusion`]: self-attention over hidden layers plus the classifier.
//! - [`learner`]: full forward/backward pass, training step, checkpoints.
//! - [`gradcheck`]: finite-difference verification of the hand-written
//!   gradients.
//! - [`drift`]: loss window, drift state machine, shared-parameter
//!   snapshots, hard-example buffer.
//! - [`streams`]: synthetic stream generators, file loading, online
//!   standardization, noise injection.
//! - [`eval`]: prequential (test-then-train) harness and metrics.
//! - [`config`] / [`cli`]: run configuration and the command-line entry
//!   points.

pub mod autoencoder;
pub mod cli;
pub mod config;
pub mod drift;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod learner;
pub mod linalg;
pub mod memory;
pub mod streams;

pub use error::{AoilError, Result};
