use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = QueueError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("invalid topic name {0:?}: expected [a-z0-9-]{{1,64}}")]
    InvalidTopicName(String),

    #[error("invalid consumer id {0:?}: expected [A-Za-z0-9_-]{{1,64}}")]
    InvalidConsumerId(String),

    #[error("payload of {size} bytes exceeds the {limit} byte limit")]
    PayloadTooLarge { size: usize, limit: usize },

    #[error("key of {0} bytes exceeds the 65535 byte limit")]
    KeyTooLarge(usize),

    #[error("unknown topic {0:?}")]
    UnknownTopic(String),

    #[error("topic {topic:?} is corrupt at offset {offset} ({segment}:{position}); topic is read-only")]
    Corruption {
        topic: String,
        offset: u64,
        segment: PathBuf,
        position: u64,
    },

    #[error("topic {0:?} is read-only after an integrity violation")]
    ReadOnly(String),

    #[error("topic {0:?} is locked by another writer")]
    Locked(String),

    #[error("offset {offset} is beyond the end of topic {topic:?} (next offset {next})")]
    OffsetBeyondEnd { topic: String, offset: u64, next: u64 },

    #[error("cursor regression for {consumer:?} on {topic:?}: committed {committed}, requested {requested}")]
    CursorRegression {
        consumer: String,
        topic: String,
        committed: u64,
        requested: u64,
    },

    #[error("cursor file {0} fails its checksum")]
    CorruptCursor(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| QueueError::Io {
            path: path.into(),
            source,
        })
    }
}
