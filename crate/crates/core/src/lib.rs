//! Feed-forward networks trained with hybrid squared-error / cross-entropy
//! losses, and the repeated cross-validation harness used to compare the
//! nine loss variants.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod report;
pub mod stats;
pub mod store;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, RunRecord};
pub use loss::LossVariant;
pub use nn::Network;
