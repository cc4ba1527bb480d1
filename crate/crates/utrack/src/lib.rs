//! Command-line front end of the underwater tracking simulator: config
//! files, threaded batch execution, training with checkpoints, curricula,
//! evaluation, benchmarks and trajectory export.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod curriculum;
pub mod error;
pub mod io;
pub mod plot;
pub mod trainer;
pub mod vecenv;

pub use error::{AppError, AppResult};
