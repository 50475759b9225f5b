use std::path::{Path, PathBuf};

use neucolor_core::eval::EvalError;
use neucolor_core::mesher::MeshError;
use neucolor_core::renderer::RenderError;
use neucolor_core::synth::SynthError;
use neucolor_core::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Stable token for the one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Dataset(_) => "dataset",
            Error::Config(_) => "config",
            Error::Train(_) => "train",
            Error::Mesh(MeshError::VariantMismatch { .. }) => "variant_mismatch",
            Error::Eval(_) => "eval",
            Error::Render(_) => "render",
            Error::Synth(_) => "synth",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
