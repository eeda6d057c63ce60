use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("layer {layer} takes {fan_in} inputs but the previous layer produces {previous}")]
    LayerChain {
        layer: usize,
        fan_in: usize,
        previous: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {0} is outside 0..=9")]
    Label(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged in epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("empty dataset: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
