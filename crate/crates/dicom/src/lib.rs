//! DICOM Part-10 files in uncompressed little-endian transfer syntaxes.
//!
//! [`parse`] accepts implicit and explicit VR little endian and keeps every
//! element's bytes. [`serialize`] always writes one canonical form (explicit
//! VR little endian, ascending tags, even-length padded values, defined
//! lengths), so `serialize(parse(serialize(f)))` is byte-identical to
//! `serialize(f)`. [`render_preview`] maps frame 0 of a MONOCHROME2 image
//! through a linear window to 8-bit grayscale.

pub mod dataset;
pub mod dictionary;
mod error;
mod parse;
mod pixels;
pub mod tag;
mod value;
pub mod vr;
mod write;

pub use dataset::{Dataset, DicomFile, Element, Value};
pub use error::{DicomError, Result};
pub use parse::parse;
pub use pixels::{render_preview, window_byte, GrayImage, PixelDescriptor, PixelRepresentation};
pub use tag::{tags, Tag};
pub use value::{decode_element, get_value, DicomValue};
pub use vr::Vr;
pub use write::{serialize, write_dataset};
