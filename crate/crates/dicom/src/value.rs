use crate::dataset::{trim_padding, DicomFile, Element, Value};
use crate::error::{DicomError, Result};
use crate::tag::Tag;
use crate::vr::Vr;

/// An element value decoded according to its VR.
#[derive(Debug, Clone, PartialEq)]
pub enum DicomValue {
    Text(String),
    U16(Vec<u16>),
    I16(Vec<i16>),
    U32(Vec<u32>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    Bytes(Vec<u8>),
    /// Number of items.
    Sequence(usize),
}

impl DicomValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            DicomValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// First numeric value; `DS`/`IS` text is parsed.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            DicomValue::Text(s) => s.split('\\').next()?.trim().parse().ok(),
            DicomValue::U16(v) => v.first().map(|&x| x as f64),
            DicomValue::I16(v) => v.first().map(|&x| x as f64),
            DicomValue::U32(v) => v.first().map(|&x| x as f64),
            DicomValue::I32(v) => v.first().map(|&x| x as f64),
            DicomValue::F32(v) => v.first().map(|&x| x as f64),
            DicomValue::F64(v) => v.first().copied(),
            DicomValue::Bytes(_) | DicomValue::Sequence(_) => None,
        }
    }
}

fn chunks<const N: usize, T>(e: &Element, bytes: &[u8], f: fn([u8; N]) -> T) -> Result<Vec<T>> {
    if bytes.len() % N != 0 {
        return Err(DicomError::MalformedValue {
            tag: e.tag,
            reason: format!("{} bytes is not a multiple of {N} for {}", bytes.len(), e.vr),
        });
    }
    Ok(bytes
        .chunks_exact(N)
        .map(|c| f(c.try_into().unwrap()))
        .collect())
}

pub fn decode_element(e: &Element) -> Result<DicomValue> {
    let bytes = match &e.value {
        Value::Sequence(items) => return Ok(DicomValue::Sequence(items.len())),
        Value::Bytes(b) => b.as_slice(),
    };
    Ok(match e.vr {
        vr if vr.is_text() => {
            let s = std::str::from_utf8(bytes).map_err(|err| DicomError::MalformedValue {
                tag: e.tag,
                reason: err.to_string(),
            })?;
            DicomValue::Text(trim_padding(s).to_string())
        }
        Vr::US => DicomValue::U16(chunks(e, bytes, u16::from_le_bytes)?),
        Vr::SS => DicomValue::I16(chunks(e, bytes, i16::from_le_bytes)?),
        Vr::UL => DicomValue::U32(chunks(e, bytes, u32::from_le_bytes)?),
        Vr::SL => DicomValue::I32(chunks(e, bytes, i32::from_le_bytes)?),
        Vr::FL => DicomValue::F32(chunks(e, bytes, f32::from_le_bytes)?),
        Vr::FD => DicomValue::F64(chunks(e, bytes, f64::from_le_bytes)?),
        _ => DicomValue::Bytes(bytes.to_vec()),
    })
}

/// Looks `tag` up in the file meta group (group 0002) or the main dataset.
/// An absent tag is `Ok(None)`, not an error.
pub fn get_value(file: &DicomFile, tag: Tag) -> Result<Option<DicomValue>> {
    let ds = if tag.is_file_meta() {
        &file.file_meta
    } else {
        &file.dataset
    };
    ds.get(tag).map(decode_element).transpose()
}
