use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("no subject: image has no pixel with alpha > 0")]
    NoSubject,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures decoding or encoding the progressive model container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: not a progressive light field model file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("header truncated")]
    TruncatedHeader,
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("chunk {chunk} truncated: need {needed} bytes, have {available}")]
    TruncatedChunk {
        chunk: usize,
        needed: usize,
        available: usize,
    },
    #[error("chunk {chunk} checksum mismatch (expected {expected:08x}, got {actual:08x})")]
    ChecksumMismatch {
        chunk: usize,
        expected: u32,
        actual: u32,
    },
    #[error("occupancy blob corrupt: {0}")]
    Occupancy(String),
    #[error("requested level {requested} but model has {available} levels")]
    NoSuchLevel { requested: usize, available: usize },
    #[error("refusing to pack non-finite parameter in layer {layer}")]
    NonFinite { layer: usize },
    #[error("malformed header: {0}")]
    Malformed(String),
}
