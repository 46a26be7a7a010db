//! Command-line pipeline for limb pose estimation from depth video: dataset
//! preparation, training, evaluation, inference, synthetic data, and the
//! HTTP service used by the annotation tool.

pub mod commands;
pub mod config;
mod error;
pub mod pipeline;
pub mod render;
pub mod server;
pub mod store;

pub use error::{CliError, Result};
