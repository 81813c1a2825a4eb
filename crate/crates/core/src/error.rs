use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("octree depth out of range: {0}")]
    DepthRange(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    #[error("truncated {what}: need {needed} bytes, have {available}")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("duplicate particle id {0}")]
    DuplicateId(u64),

    #[error("block holds {count} points, more than the capacity {capacity}")]
    OverCapacity { count: usize, capacity: usize },

    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("item of {bytes} bytes exceeds cache capacity {capacity}")]
    CacheItemTooLarge { bytes: u64, capacity: u64 },

    #[error("selection of {len} ids exceeds the cap of {cap}")]
    SelectionTooLarge { len: usize, cap: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach the file a failure came from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
