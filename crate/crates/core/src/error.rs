use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}: knowledge graph is empty")]
    EmptyGraph(String),
    #[error("{what} id {id} out of bounds (len {len})")]
    Bounds { what: &'static str, id: usize, len: usize },
    #[error("numeric failure in {layer}: {source}")]
    Numeric { layer: String, source: TensorError },
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a layer name to tensor failures raised inside it.
    pub fn in_layer(layer: impl Into<String>) -> impl FnOnce(TensorError) -> Error {
        let layer = layer.into();
        move |source| Error::Numeric { layer, source }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. } | Error::Tensor(TensorError::NonFinite { .. })
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
