use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed raster: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("missing band '{0}'")]
    MissingBand(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient overlap: {found} valid pixels, at least {required} required")]
    InsufficientOverlap { found: usize, required: usize },

    #[error("class {class} ({name}) has no labeled pixels with a valid nDSM")]
    EmptyClass { class: usize, name: String },

    #[error("unknown class id {0} in prediction")]
    UnknownClass(u8),

    #[error("invalid probability cube: {0}")]
    InvalidCube(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("instance too large for the brute-force reference: {0}")]
    TooLarge(String),

    #[error("empty region")]
    EmptyRegion,

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
