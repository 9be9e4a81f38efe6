use proptest::prelude::*;
use screenforge_dicom::{parse, serialize, Dataset, DicomFile, Element, Tag, Value, Vr};

const TEXT_VRS: [Vr; 14] = [
    Vr::AE, Vr::AS, Vr::CS, Vr::DA, Vr::DS, Vr::DT, Vr::IS, Vr::LO, Vr::LT, Vr::PN, Vr::SH,
    Vr::ST, Vr::TM, Vr::UI,
];
const BINARY_VRS: [Vr; 9] = [
    Vr::UL, Vr::US, Vr::SS, Vr::SL, Vr::FL, Vr::FD, Vr::OB, Vr::OW, Vr::UN,
];

fn tag() -> impl Strategy<Value = Tag> {
    (0x0004u16..0x7FFF, 0x0001u16..0xFFFF).prop_map(|(g, e)| Tag(g, e))
}

fn leaf() -> impl Strategy<Value = Element> {
    let text = (tag(), prop::sample::select(TEXT_VRS.to_vec()), "[A-Z0-9 ^.]{0,40}")
        .prop_map(|(t, vr, s)| Element::new(t, vr, s.into_bytes()));
    let binary = (
        tag(),
        prop::sample::select(BINARY_VRS.to_vec()),
        prop::collection::vec(any::<u8>(), 0..48),
    )
        .prop_map(|(t, vr, b)| Element::new(t, vr, b));
    prop_oneof![text, binary]
}

fn dataset(depth: u32) -> BoxedStrategy<Dataset> {
    let elements = if depth == 0 {
        prop::collection::vec(leaf(), 0..12).boxed()
    } else {
        let seq = (tag(), prop::collection::vec(dataset(depth - 1), 0..3))
            .prop_map(|(t, items)| Element::sequence(t, items));
        prop::collection::vec(prop_oneof![4 => leaf(), 1 => seq], 0..12).boxed()
    };
    elements
        .prop_map(|es| es.into_iter().collect::<Dataset>())
        .boxed()
}

/// Expected dataset after one write: odd values gain one pad byte.
fn padded(ds: &Dataset) -> Dataset {
    ds.iter()
        .map(|e| match &e.value {
            Value::Sequence(items) => Element::sequence(e.tag, items.iter().map(padded).collect()),
            Value::Bytes(b) => {
                let mut b = b.clone();
                if b.len() % 2 == 1 {
                    let is_text = TEXT_VRS.contains(&e.vr);
                    b.push(if is_text && e.vr != Vr::UI { b' ' } else { 0 });
                }
                Element::new(e.tag, e.vr, b)
            }
        })
        .collect()
}

fn strictly_ascending(ds: &Dataset) -> bool {
    let tags: Vec<Tag> = ds.tags().collect();
    tags.windows(2).all(|w| w[0] < w[1])
        && ds
            .iter()
            .filter_map(|e| e.items())
            .flatten()
            .all(strictly_ascending)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn serialize_parse_is_a_fixed_point(ds in dataset(2)) {
        let file = DicomFile::new(ds.clone());
        let once = serialize(&file).unwrap();
        let parsed = parse(&once).unwrap();
        prop_assert_eq!(&parsed.dataset, &padded(&ds));
        prop_assert!(strictly_ascending(&parsed.dataset));
        let twice = serialize(&parsed).unwrap();
        prop_assert_eq!(once, twice);
    }
}

mod rendering {
    use super::*;
    use screenforge_dicom::{render_preview, tags, window_byte};

    fn constant_image(value: i16, rows: u16, cols: u16) -> DicomFile {
        let mut ds = Dataset::new();
        let us = |t, v: u16| Element::new(t, Vr::US, v.to_le_bytes().to_vec());
        ds.put(us(tags::SAMPLES_PER_PIXEL, 1));
        ds.put(Element::text(tags::PHOTOMETRIC_INTERPRETATION, Vr::CS, "MONOCHROME2"));
        ds.put(us(tags::ROWS, rows));
        ds.put(us(tags::COLUMNS, cols));
        ds.put(us(tags::BITS_ALLOCATED, 16));
        ds.put(us(tags::BITS_STORED, 16));
        ds.put(us(tags::PIXEL_REPRESENTATION, 1));
        let n = rows as usize * cols as usize;
        let data: Vec<u8> = std::iter::repeat_n(value.to_le_bytes(), n).flatten().collect();
        ds.put(Element::new(tags::PIXEL_DATA, Vr::OW, data));
        DicomFile::new(ds)
    }

    proptest! {
        #[test]
        fn constant_image_fills_one_bin(v in -2000i16..2000, wc in -500.0f64..500.0, ww in 1.0f64..3000.0,
                                         rows in 1u16..6, cols in 1u16..6) {
            let img = render_preview(&constant_image(v, rows, cols), wc, ww).unwrap();
            prop_assert_eq!(img.pixels.len(), rows as usize * cols as usize);
            let y = window_byte(v as f64, wc, ww);
            prop_assert!(img.pixels.iter().all(|&p| p == y));
        }

        #[test]
        fn window_is_monotone(a in -4000.0f64..4000.0, b in -4000.0f64..4000.0,
                              wc in -500.0f64..500.0, ww in 1.0f64..3000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(window_byte(lo, wc, ww) <= window_byte(hi, wc, ww));
        }
    }
}
