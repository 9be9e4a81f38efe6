use thiserror::Error;

use crate::tag::Tag;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DicomError {
    #[error("not a DICOM Part-10 stream (missing DICM magic at offset 128)")]
    NotDicom,

    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),

    #[error("element {0} extends past the end of the input")]
    Truncated(Tag),

    #[error("malformed element {tag}: {reason}")]
    Malformed { tag: Tag, reason: String },

    #[error("value of {tag} is {len} bytes, more than its VR can encode")]
    SerializeOverflow { tag: Tag, len: usize },

    #[error("value of {tag} is malformed for its VR: {reason}")]
    MalformedValue { tag: Tag, reason: String },

    #[error("unsupported pixel data: {0}")]
    UnsupportedPixels(String),
}

pub type Result<T, E = DicomError> = std::result::Result<T, E>;
