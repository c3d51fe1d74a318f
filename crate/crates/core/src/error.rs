use alloc::string::String;

use crate::model::TaskId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input to layer `layer` had the wrong width.
    #[error("layer {layer}: expected input dim {expected}, got {actual}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("cross-entropy loss requires labels")]
    MissingLabels,
    #[error("no head for task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} already has a head")]
    DuplicateTask(TaskId),
    #[error("cross-head statistics need at least two tasks, got {0}")]
    TooFewTasks(usize),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
