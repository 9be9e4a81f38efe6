//! Text dump in the layout the fixture generator writes from pydicom.

use screenforge_dicom::dataset::IMPLICIT_VR_LITTLE_ENDIAN;
use screenforge_dicom::{Dataset, DicomFile, Value};

fn dump_dataset(ds: &Dataset, implicit: bool, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    for e in ds.iter() {
        match &e.value {
            Value::Sequence(items) => {
                out.push_str(&format!("{pad}{} SQ {}\n", e.tag, items.len()));
                for item in items {
                    out.push_str(&format!("{pad}  item\n"));
                    dump_dataset(item, implicit, depth + 2, out);
                }
            }
            Value::Bytes(b) => {
                let vr = if implicit { "--" } else { e.vr.as_str() };
                out.push_str(&format!("{pad}{} {vr} {}\n", e.tag, hex(b)));
            }
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn dump(f: &DicomFile) -> String {
    let implicit = f.transfer_syntax == IMPLICIT_VR_LITTLE_ENDIAN;
    let mut out = format!("transfer_syntax {}\nmeta\n", f.transfer_syntax);
    dump_dataset(&f.file_meta, false, 1, &mut out);
    out.push_str("dataset\n");
    dump_dataset(&f.dataset, implicit, 1, &mut out);
    out
}
