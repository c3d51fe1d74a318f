//! Soft-masking of parameter-level gradient flow for task-incremental
//! continual learning.
//!
//! After each task the gradients of a trained model are turned into a
//! per-parameter importance in `[0, 1)`. Importances accumulate across tasks
//! by element-wise maximum, and while training later tasks every gradient of
//! the shared feature extractor is attenuated by `1 - importance`. The
//! current task's head is attenuated uniformly by the mean importance.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! the command line, or threads lives in the companion `spg` crate.
//!
//! Layout:
//! - [`nn`]: dense layers, explicit forward/backward, and an SGD step with a
//!   gradient-transform hook.
//! - [`model`]: shared extractor plus one head per task.
//! - [`importance`]: gradient-based and Fisher importances, accumulation and
//!   cross-head overwrite statistics.
//! - [`masking`]: soft and hard gradient masks, blocked-capacity counts.
//! - [`trainer`]: the continual loop for every method and ablation.
//! - [`eval`]: accuracy matrix metrics, pruning and probing experiments.
//! - [`data`]: synthetic task streams and class-split streams.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod importance;
pub mod masking;
pub mod model;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{TaskId, TilModel};
pub use nn::{Activation, Batch, GradientSet, LayerParams, Matrix, Network};
