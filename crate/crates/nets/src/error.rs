use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("expected input of shape {expected:?}, got {got:?}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{stage} training diverged at step {step}: {name} = {value}")]
    Diverged {
        stage: &'static str,
        step: u64,
        name: String,
        value: f64,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("no regressor for scene {0}")]
    MissingScene(usize),
    #[error(transparent)]
    Geometry(#[from] lidarloc_core::geometry::GeometryError),
    #[error("metric log {path}: {message}")]
    Log { path: PathBuf, message: String },
}
