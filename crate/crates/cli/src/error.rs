use std::path::PathBuf;

use lidarloc_core::dataset::DatasetError;
use lidarloc_core::geometry::GeometryError;
use lidarloc_core::synth::SynthError;
use lidarloc_nets::NetError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("registry {root}: {message}")]
    Registry { root: PathBuf, message: String },
    #[error("registry has no regressor for scene {0}")]
    MissingRegressor(usize),
    #[error("image is {got:?}, the pipeline expects {expected:?}")]
    ImageSize {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
