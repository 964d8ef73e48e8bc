//! On-disk formats: run configuration and checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{config_digest, Checkpoint, CheckpointError, NamedTensor, OptimizerSection, MAGIC, VERSION};
pub use config::{ConfigFileError, EvalConfig, RunConfig, SplitConfig};
