use crate::dataset::{
    Dataset, DicomFile, Element, Value, EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN,
};
use crate::dictionary;
use crate::error::{DicomError, Result};
use crate::tag::{tags, Tag};
use crate::vr::{foreign_code_has_long_length, Vr};

const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, tag: Tag) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(DicomError::Truncated(tag));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, tag: Tag) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, tag)?.try_into().unwrap()))
    }

    fn u32(&mut self, tag: Tag) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, tag)?.try_into().unwrap()))
    }

    /// Reads a tag; `context` is reported if the stream ends mid-tag.
    fn tag(&mut self, context: Tag) -> Result<Tag> {
        let g = self.u16(context)?;
        let e = self.u16(context)?;
        Ok(Tag(g, e))
    }

    fn peek_group(&self) -> Option<u16> {
        (self.remaining() >= 2)
            .then(|| u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Explicit,
    Implicit,
}

/// Parses a DICOM Part-10 byte stream in implicit or explicit VR little
/// endian. Element values are kept byte for byte; tags this crate does not
/// know keep their bytes under `UN`.
pub fn parse(bytes: &[u8]) -> Result<DicomFile> {
    if bytes.len() < 132 || &bytes[128..132] != b"DICM" {
        return Err(DicomError::NotDicom);
    }
    let mut preamble = [0u8; 128];
    preamble.copy_from_slice(&bytes[..128]);
    let mut r = Reader { buf: bytes, pos: 132 };

    let mut file_meta = Dataset::new();
    while r.peek_group() == Some(0x0002) {
        let tag = r.tag(tags::FILE_META_GROUP_LENGTH)?;
        let element = read_element(&mut r, tag, Encoding::Explicit, bytes.len())?;
        insert_unique(&mut file_meta, element)?;
    }

    let transfer_syntax = file_meta
        .text(tags::TRANSFER_SYNTAX_UID)
        .ok_or_else(|| DicomError::Malformed {
            tag: tags::TRANSFER_SYNTAX_UID,
            reason: "file meta group has no transfer syntax".into(),
        })?;
    let encoding = match transfer_syntax.as_str() {
        EXPLICIT_VR_LITTLE_ENDIAN => Encoding::Explicit,
        IMPLICIT_VR_LITTLE_ENDIAN => Encoding::Implicit,
        _ => return Err(DicomError::UnsupportedTransferSyntax(transfer_syntax)),
    };

    let dataset = read_dataset(&mut r, encoding, bytes.len(), false)?;
    Ok(DicomFile {
        preamble,
        file_meta,
        dataset,
        transfer_syntax,
    })
}

fn insert_unique(ds: &mut Dataset, element: Element) -> Result<()> {
    let tag = element.tag;
    if ds.put(element).is_some() {
        return Err(DicomError::Malformed {
            tag,
            reason: "duplicate tag at one nesting level".into(),
        });
    }
    Ok(())
}

/// Reads elements until `end`, or until an item delimiter when
/// `delimited` is set.
fn read_dataset(r: &mut Reader<'_>, enc: Encoding, end: usize, delimited: bool) -> Result<Dataset> {
    let mut ds = Dataset::new();
    loop {
        if r.pos >= end {
            if delimited {
                return Err(DicomError::Truncated(tags::ITEM));
            }
            if r.pos > end {
                return Err(DicomError::Malformed {
                    tag: tags::ITEM,
                    reason: "item contents overrun the item length".into(),
                });
            }
            return Ok(ds);
        }
        if end - r.pos < 4 {
            return Err(DicomError::Malformed {
                tag: ds.tags().last().unwrap_or(Tag(0, 0)),
                reason: format!("{} stray bytes after the last element", end - r.pos),
            });
        }
        let tag = r.tag(tags::ITEM)?;
        if tag == tags::ITEM_DELIMITATION {
            r.u32(tag)?;
            if delimited {
                return Ok(ds);
            }
            return Err(DicomError::Malformed {
                tag,
                reason: "item delimiter outside an undefined-length item".into(),
            });
        }
        let element = read_element(r, tag, enc, end)?;
        insert_unique(&mut ds, element)?;
    }
}

fn read_element(r: &mut Reader<'_>, tag: Tag, enc: Encoding, end: usize) -> Result<Element> {
    let (vr, len, item_encoding) = match enc {
        Encoding::Explicit => {
            let code: [u8; 2] = r.take(2, tag)?.try_into().unwrap();
            let (vr, long) = match Vr::from_code(code) {
                Some(vr) => (vr, vr.has_long_length()),
                None if foreign_code_has_long_length(code) => (Vr::UN, true),
                None if code.iter().all(u8::is_ascii_uppercase) => (Vr::UN, false),
                None => {
                    return Err(DicomError::Malformed {
                        tag,
                        reason: format!("invalid VR bytes {:02X}{:02X}", code[0], code[1]),
                    })
                }
            };
            let len = if long {
                r.take(2, tag)?;
                r.u32(tag)?
            } else {
                r.u16(tag)? as u32
            };
            // An undefined-length UN holds an implicit VR sequence.
            let items = if vr == Vr::UN {
                Encoding::Implicit
            } else {
                Encoding::Explicit
            };
            (vr, len, items)
        }
        Encoding::Implicit => (dictionary::implicit_vr(tag), r.u32(tag)?, Encoding::Implicit),
    };

    if len == UNDEFINED_LENGTH {
        if tag == tags::PIXEL_DATA {
            return Err(DicomError::Malformed {
                tag,
                reason: "encapsulated pixel data in an uncompressed transfer syntax".into(),
            });
        }
        if vr != Vr::SQ && vr != Vr::UN {
            return Err(DicomError::Malformed {
                tag,
                reason: format!("undefined length on {vr}"),
            });
        }
        let items = read_items(r, tag, item_encoding, end, None)?;
        return Ok(Element::sequence(tag, items));
    }

    let len = len as usize;
    if r.remaining() < len || r.pos + len > end {
        return Err(DicomError::Truncated(tag));
    }
    if vr == Vr::SQ {
        let seq_end = r.pos + len;
        let items = read_items(r, tag, enc, seq_end, Some(seq_end))?;
        return Ok(Element::sequence(tag, items));
    }
    let value = r.take(len, tag)?.to_vec();
    Ok(Element {
        tag,
        vr,
        value: Value::Bytes(value),
    })
}

/// Reads sequence items up to `defined_end`, or up to a sequence delimiter
/// when the sequence length is undefined.
fn read_items(
    r: &mut Reader<'_>,
    seq_tag: Tag,
    enc: Encoding,
    limit: usize,
    defined_end: Option<usize>,
) -> Result<Vec<Dataset>> {
    let mut items = Vec::new();
    loop {
        if let Some(end) = defined_end {
            if r.pos == end {
                return Ok(items);
            }
        }
        if r.pos + 8 > limit {
            return Err(DicomError::Truncated(seq_tag));
        }
        let tag = r.tag(seq_tag)?;
        let len = r.u32(seq_tag)?;
        if tag == tags::SEQUENCE_DELIMITATION && defined_end.is_none() {
            return Ok(items);
        }
        if tag != tags::ITEM {
            return Err(DicomError::Malformed {
                tag: seq_tag,
                reason: format!("expected item tag, found {tag}"),
            });
        }
        let item = if len == UNDEFINED_LENGTH {
            read_dataset(r, enc, limit, true)?
        } else {
            let item_end = r.pos + len as usize;
            if item_end > limit {
                return Err(DicomError::Truncated(seq_tag));
            }
            read_dataset(r, enc, item_end, false)?
        };
        items.push(item);
    }
}
