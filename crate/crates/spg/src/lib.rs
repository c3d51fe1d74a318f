//! File formats, configuration and experiment drivers around `spg-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod idx;
pub mod records;

pub use error::{Error, Result};
