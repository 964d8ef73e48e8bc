use std::fmt::Display;

use forgeloc::persist::CheckpointError;
use forgeloc::training::TrainError;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERICAL: u8 = 3;

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(e: impl Display) -> Self {
        Self { code: USAGE, message: e.to_string() }
    }

    pub fn data(e: impl Display) -> Self {
        Self { code: DATA, message: e.to_string() }
    }

    pub fn numerical(e: impl Display) -> Self {
        Self { code: NUMERICAL, message: e.to_string() }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() { Self::numerical(e) } else { Self::data(e) }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Config(_) => Self::usage(e),
            _ => Self::data(e),
        }
    }
}
