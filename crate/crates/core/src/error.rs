use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] diffcore::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image parse error at byte {offset}: {msg}")]
    ImageFormat { offset: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset: {0}")]
    Data(String),

    #[error("mask: {0}")]
    Mask(String),

    #[error("filter: class {class} needs {required} candidates but the pool has {available}")]
    PoolTooSmall {
        class: usize,
        required: usize,
        available: usize,
    },

    #[error("model: {0}")]
    Model(String),

    #[error("feature extractor has not been trained")]
    Untrained,

    #[error("class {class} has no images in the {set}")]
    MissingClass { class: usize, set: &'static str },

    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: diffcore::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
