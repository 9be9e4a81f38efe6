use crate::dataset::{canonical_meta, Dataset, DicomFile, Element, Value};
use crate::error::{DicomError, Result};
use crate::tag::tags;
use crate::vr::Vr;

/// Serializes to the canonical form: zeroed preamble, regenerated file meta
/// group, explicit VR little endian, ascending tags, even-length padded
/// values and defined-length sequences and items.
pub fn serialize(file: &DicomFile) -> Result<Vec<u8>> {
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");

    let meta = canonical_meta(&file.file_meta, &file.dataset);
    let mut meta_body = Vec::new();
    write_dataset(&mut meta_body, &meta)?;
    write_element(
        &mut out,
        &Element::new(
            tags::FILE_META_GROUP_LENGTH,
            Vr::UL,
            (meta_body.len() as u32).to_le_bytes().to_vec(),
        ),
    )?;
    out.extend_from_slice(&meta_body);

    write_dataset(&mut out, &file.dataset)?;
    Ok(out)
}

/// Encodes one dataset level (explicit VR LE) without any file framing.
pub fn write_dataset(out: &mut Vec<u8>, ds: &Dataset) -> Result<()> {
    for e in ds {
        write_element(out, e)?;
    }
    Ok(())
}

fn write_header(out: &mut Vec<u8>, e: &Element, len: usize) -> Result<()> {
    if len > e.vr.max_length() {
        return Err(DicomError::SerializeOverflow { tag: e.tag, len });
    }
    out.extend_from_slice(&e.tag.0.to_le_bytes());
    out.extend_from_slice(&e.tag.1.to_le_bytes());
    out.extend_from_slice(&e.vr.code());
    if e.vr.has_long_length() {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(len as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(len as u16).to_le_bytes());
    }
    Ok(())
}

fn write_element(out: &mut Vec<u8>, e: &Element) -> Result<()> {
    match &e.value {
        Value::Bytes(bytes) => {
            let padded = bytes.len() + bytes.len() % 2;
            write_header(out, e, padded)?;
            out.extend_from_slice(bytes);
            if bytes.len() % 2 == 1 {
                out.push(e.vr.padding());
            }
        }
        Value::Sequence(items) => {
            let mut body = Vec::new();
            for item in items {
                let mut item_body = Vec::new();
                write_dataset(&mut item_body, item)?;
                if item_body.len() > 0xFFFF_FFFE {
                    return Err(DicomError::SerializeOverflow {
                        tag: e.tag,
                        len: item_body.len(),
                    });
                }
                body.extend_from_slice(&tags::ITEM.0.to_le_bytes());
                body.extend_from_slice(&tags::ITEM.1.to_le_bytes());
                body.extend_from_slice(&(item_body.len() as u32).to_le_bytes());
                body.extend_from_slice(&item_body);
            }
            let seq = Element {
                tag: e.tag,
                vr: Vr::SQ,
                value: Value::Bytes(Vec::new()),
            };
            write_header(out, &seq, body.len())?;
            out.extend_from_slice(&body);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;
    use crate::tag::Tag;

    #[test]
    fn empty_dataset_is_preamble_magic_and_meta_only() {
        let file = DicomFile::new(Dataset::new());
        let bytes = serialize(&file).unwrap();
        assert!(bytes[..128].iter().all(|&b| b == 0));
        assert_eq!(&bytes[128..132], b"DICM");
        let mut pos = 132;
        while pos < bytes.len() {
            let group = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
            assert_eq!(group, 0x0002);
            let len = u16::from_le_bytes([bytes[pos + 6], bytes[pos + 7]]) as usize;
            let long = matches!(&bytes[pos + 4..pos + 6], b"OB");
            pos += if long {
                12 + u32::from_le_bytes(bytes[pos + 8..pos + 12].try_into().unwrap()) as usize
            } else {
                8 + len
            };
        }
        assert_eq!(pos, bytes.len());
        let group_len = u32::from_le_bytes(bytes[140..144].try_into().unwrap()) as usize;
        assert_eq!(group_len, bytes.len() - 144);
    }

    #[test]
    fn odd_values_are_padded_per_vr() {
        let mut ds = Dataset::new();
        ds.put(Element::text(tags::PATIENT_NAME, Vr::PN, "DOE^JAN"));
        ds.put(Element::text(tags::SOP_INSTANCE_UID, Vr::UI, "1.2.3"));
        let bytes = serialize(&DicomFile::new(ds)).unwrap();
        let parsed = parse(&bytes).unwrap();
        assert_eq!(parsed.dataset.get(tags::PATIENT_NAME).unwrap().bytes().unwrap(), b"DOE^JAN ");
        assert_eq!(parsed.dataset.get(tags::SOP_INSTANCE_UID).unwrap().bytes().unwrap(), b"1.2.3\0");
        assert_eq!(
            parsed.file_meta.text(tags::MEDIA_STORAGE_SOP_INSTANCE_UID).as_deref(),
            Some("1.2.3")
        );
    }

    #[test]
    fn short_vr_overflow() {
        let mut ds = Dataset::new();
        ds.put(Element::new(Tag(0x0010, 0x4000), Vr::LT, vec![b'a'; 70_000]));
        assert_eq!(
            serialize(&DicomFile::new(ds)),
            Err(DicomError::SerializeOverflow {
                tag: Tag(0x0010, 0x4000),
                len: 70_000
            })
        );
    }

    #[test]
    fn serialization_is_deterministic() {
        let mut ds = Dataset::new();
        ds.put(Element::text(tags::PATIENT_ID, Vr::LO, "1007"));
        ds.put(Element::sequence(
            tags::REFERENCED_STUDY_SEQUENCE,
            vec![[Element::text(tags::REFERENCED_SOP_INSTANCE_UID, Vr::UI, "1.2.3.4")]
                .into_iter()
                .collect()],
        ));
        let f = DicomFile::new(ds);
        assert_eq!(serialize(&f).unwrap(), serialize(&f).unwrap());
    }
}
