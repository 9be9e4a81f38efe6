//! Byte layout of one framed record.
//!
//! ```text
//! [u32 length][u32 crc32][u64 offset][u64 timestamp_ms][u16 key_len][key][payload]
//! ```
//!
//! All integers are little-endian. `length` counts every byte after the CRC
//! field, and the CRC covers exactly those bytes.

/// Bytes occupied by the `length` and `crc32` fields.
pub const PREFIX_LEN: usize = 8;

/// Fixed part of the body: offset, timestamp and key length.
pub const BODY_HEADER_LEN: usize = 8 + 8 + 2;

/// Smallest legal value of the `length` field.
pub const MIN_BODY_LEN: usize = BODY_HEADER_LEN;

/// One decoded frame, borrowing key and payload from the source buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame<'a> {
    pub offset: u64,
    pub timestamp_ms: u64,
    pub checksum: u32,
    pub key: &'a [u8],
    pub payload: &'a [u8],
}

/// Outcome of trying to decode the frame at the start of a buffer.
#[derive(Debug, PartialEq, Eq)]
pub enum Decoded<'a> {
    /// A complete frame with a valid checksum, occupying `len` bytes.
    Valid { frame: Frame<'a>, len: usize },
    /// The buffer ends before the frame does.
    Incomplete,
    /// The frame is complete but fails validation; `len` is its claimed size
    /// when the length header was usable.
    Invalid { len: Option<usize> },
}

/// Total on-disk size of a frame with the given key and payload.
pub fn frame_len(key_len: usize, payload_len: usize) -> usize {
    PREFIX_LEN + BODY_HEADER_LEN + key_len + payload_len
}

pub fn encode(offset: u64, timestamp_ms: u64, key: &[u8], payload: &[u8]) -> Vec<u8> {
    assert!(key.len() <= u16::MAX as usize, "key longer than u16::MAX");
    let body_len = BODY_HEADER_LEN + key.len() + payload.len();
    let mut buf = Vec::with_capacity(PREFIX_LEN + body_len);
    buf.extend_from_slice(&(body_len as u32).to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    buf.extend_from_slice(&offset.to_le_bytes());
    buf.extend_from_slice(&timestamp_ms.to_le_bytes());
    buf.extend_from_slice(&(key.len() as u16).to_le_bytes());
    buf.extend_from_slice(key);
    buf.extend_from_slice(payload);
    let crc = crc32fast::hash(&buf[PREFIX_LEN..]);
    buf[4..8].copy_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode(buf: &[u8]) -> Decoded<'_> {
    if buf.len() < PREFIX_LEN {
        return Decoded::Incomplete;
    }
    let body_len = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let stored_crc = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if body_len < MIN_BODY_LEN {
        return Decoded::Invalid { len: None };
    }
    let total = PREFIX_LEN + body_len;
    if buf.len() < total {
        return Decoded::Incomplete;
    }
    let body = &buf[PREFIX_LEN..total];
    if crc32fast::hash(body) != stored_crc {
        return Decoded::Invalid { len: Some(total) };
    }
    let offset = u64::from_le_bytes(body[0..8].try_into().unwrap());
    let timestamp_ms = u64::from_le_bytes(body[8..16].try_into().unwrap());
    let key_len = u16::from_le_bytes(body[16..18].try_into().unwrap()) as usize;
    if BODY_HEADER_LEN + key_len > body_len {
        return Decoded::Invalid { len: Some(total) };
    }
    let key = &body[BODY_HEADER_LEN..BODY_HEADER_LEN + key_len];
    let payload = &body[BODY_HEADER_LEN + key_len..];
    Decoded::Valid {
        frame: Frame {
            offset,
            timestamp_ms,
            checksum: stored_crc,
            key,
            payload,
        },
        len: total,
    }
}
