//! Class-incremental learning with a decomposed classifier head.
//!
//! The final linear layer over all seen relations is split into a *previous*
//! group (columns learned in earlier tasks) and a *current* group (columns
//! added for the task being learned). Training each task runs in two stages:
//!
//! 1. the new task's data only, with the previous group snapshotted
//!    beforehand and optionally updated at a much smaller learning rate
//!    (adversarial tuning);
//! 2. the balanced episodic memory, after optionally restoring the previous
//!    group from the snapshot (empirical initialization).
//!
//! Modules:
//! - [`numerics`]: dense matrices, softmax cross-entropy, Adam.
//! - [`model`]: encoder, growable classifier head, snapshots, checkpoints.
//! - [`memory`]: per-relation exemplar bank and replay sets.
//! - [`datastream`]: synthetic relation clusters, task splits, embedding files.
//! - [`training`]: the two-stage loop and sequence runner.
//! - [`eval`]: accuracy, per-relation F1, bias and separability metrics.

pub mod datastream;
pub mod error;
pub mod eval;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
