use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the capture pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point outside the camera field of view (rho = {rho:.6} rad)")]
    OutOfFov { rho: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("camera construction failed: {0}")]
    Construction(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("patch ({i}, {j}): {source}")]
    Patch {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Training { epoch: usize, step: usize, loss: f64 },

    #[error("unknown motion family `{0}`")]
    UnknownFamily(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("{kind} version mismatch: expected {expected}, found {found}")]
    Version {
        kind: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
