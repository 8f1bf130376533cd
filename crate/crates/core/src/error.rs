use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("flare has no non-zero pixels: {0}")]
    EmptyFlare(String),
    #[error("coordinate out of bounds: {0}")]
    Bounds(String),
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("unpaired files: {0}")]
    Pairing(String),
    #[error("no depth map for background {background}: expected {expected}")]
    MissingDepth { background: PathBuf, expected: PathBuf },
}

impl Error {
    /// Stable machine-readable name, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IOError",
            Error::Format(_) => "FormatError",
            Error::Value(_) => "ValueError",
            Error::Dimension(_) => "DimensionError",
            Error::Config(_) => "ConfigError",
            Error::EmptyFlare(_) => "EmptyFlareError",
            Error::Bounds(_) => "BoundsError",
            Error::EmptyRegion => "EmptyRegionError",
            Error::Pairing(_) => "PairingError",
            Error::MissingDepth { .. } => "MissingDepthError",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
