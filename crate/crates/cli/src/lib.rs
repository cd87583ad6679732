//! Localization pipeline, model registry, config and command-line surface.

pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod pipeline;
pub mod plot;
pub mod registry;

pub use config::Config;
pub use error::{PipelineError, Result};
pub use pipeline::{evaluate_pipeline, PipelineReport, PointSource, PoseEstimate};
pub use registry::{Gap, ModelRegistry, RegistryInfo};
