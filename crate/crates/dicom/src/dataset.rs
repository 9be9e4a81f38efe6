use std::collections::btree_map::{self, BTreeMap};

use crate::tag::{tags, Tag};
use crate::vr::Vr;

/// Transfer syntaxes this crate reads. Output is always explicit VR LE.
pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";

pub const IMPLEMENTATION_CLASS_UID: &str = "2.25.160189390475416355361960592658127153981";
pub const IMPLEMENTATION_VERSION_NAME: &str = "SCREENFORGE_1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Bytes(Vec<u8>),
    Sequence(Vec<Dataset>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: Tag,
    pub vr: Vr,
    pub value: Value,
}

impl Element {
    pub fn new(tag: Tag, vr: Vr, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            tag,
            vr,
            value: Value::Bytes(bytes.into()),
        }
    }

    /// Text element; the string is stored unpadded.
    pub fn text(tag: Tag, vr: Vr, s: &str) -> Self {
        Self::new(tag, vr, s.as_bytes())
    }

    pub fn sequence(tag: Tag, items: Vec<Dataset>) -> Self {
        Self {
            tag,
            vr: Vr::SQ,
            value: Value::Sequence(items),
        }
    }

    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.value {
            Value::Bytes(b) => Some(b),
            Value::Sequence(_) => None,
        }
    }

    pub fn items(&self) -> Option<&[Dataset]> {
        match &self.value {
            Value::Sequence(items) => Some(items),
            Value::Bytes(_) => None,
        }
    }
}

/// Elements of one nesting level, iterated in ascending tag order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    elements: BTreeMap<Tag, Element>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, tag: Tag) -> Option<&Element> {
        self.elements.get(&tag)
    }

    pub fn get_mut(&mut self, tag: Tag) -> Option<&mut Element> {
        self.elements.get_mut(&tag)
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.elements.contains_key(&tag)
    }

    /// Inserts or replaces, returning the previous element.
    pub fn put(&mut self, element: Element) -> Option<Element> {
        self.elements.insert(element.tag, element)
    }

    pub fn remove(&mut self, tag: Tag) -> Option<Element> {
        self.elements.remove(&tag)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Element) -> bool) {
        self.elements.retain(|_, e| keep(e));
    }

    pub fn iter(&self) -> btree_map::Values<'_, Tag, Element> {
        self.elements.values()
    }

    pub fn iter_mut(&mut self) -> btree_map::ValuesMut<'_, Tag, Element> {
        self.elements.values_mut()
    }

    pub fn tags(&self) -> impl Iterator<Item = Tag> + '_ {
        self.elements.keys().copied()
    }

    /// Value bytes with trailing NUL/space padding removed, as UTF-8.
    pub fn text(&self, tag: Tag) -> Option<String> {
        let bytes = self.get(tag)?.bytes()?;
        Some(trim_padding(&String::from_utf8_lossy(bytes)).to_string())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Element;
    type IntoIter = btree_map::Values<'a, Tag, Element>;

    fn into_iter(self) -> Self::IntoIter {
        self.iter()
    }
}

impl FromIterator<Element> for Dataset {
    fn from_iter<I: IntoIterator<Item = Element>>(iter: I) -> Self {
        let mut ds = Dataset::new();
        for e in iter {
            ds.put(e);
        }
        ds
    }
}

pub(crate) fn trim_padding(s: &str) -> &str {
    s.trim_end_matches(['\0', ' '])
}

/// A Part-10 file: preamble, file meta group and the main dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DicomFile {
    pub preamble: [u8; 128],
    pub file_meta: Dataset,
    pub dataset: Dataset,
    pub transfer_syntax: String,
}

impl DicomFile {
    /// Wraps a dataset with a freshly built file meta group.
    pub fn new(dataset: Dataset) -> Self {
        let mut file = DicomFile {
            preamble: [0; 128],
            file_meta: Dataset::new(),
            dataset,
            transfer_syntax: EXPLICIT_VR_LITTLE_ENDIAN.to_string(),
        };
        file.sync_file_meta();
        file
    }

    pub fn sop_instance_uid(&self) -> Option<String> {
        self.dataset.text(tags::SOP_INSTANCE_UID)
    }

    /// Rebuilds the mandatory file meta elements for canonical explicit VR
    /// little-endian output, mirroring SOP class/instance from the dataset.
    pub fn sync_file_meta(&mut self) {
        self.file_meta = canonical_meta(&self.file_meta, &self.dataset);
        self.transfer_syntax = EXPLICIT_VR_LITTLE_ENDIAN.to_string();
    }

    /// Applies `f` to every element at every nesting level, depth first.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Element)) {
        visit_dataset_mut(&mut self.dataset, f);
    }
}

pub(crate) fn visit_dataset_mut(ds: &mut Dataset, f: &mut impl FnMut(&mut Element)) {
    for e in ds.iter_mut() {
        f(e);
        if let Value::Sequence(items) = &mut e.value {
            for item in items {
                visit_dataset_mut(item, f);
            }
        }
    }
}

pub(crate) fn canonical_meta(meta: &Dataset, dataset: &Dataset) -> Dataset {
    let mut meta = meta.clone();
    meta.remove(tags::FILE_META_GROUP_LENGTH);
    meta.put(Element::new(tags::FILE_META_INFORMATION_VERSION, Vr::OB, vec![0x00, 0x01]));
    if let Some(class) = dataset.text(tags::SOP_CLASS_UID) {
        meta.put(Element::text(tags::MEDIA_STORAGE_SOP_CLASS_UID, Vr::UI, &class));
    }
    if let Some(instance) = dataset.text(tags::SOP_INSTANCE_UID) {
        meta.put(Element::text(tags::MEDIA_STORAGE_SOP_INSTANCE_UID, Vr::UI, &instance));
    }
    meta.put(Element::text(tags::TRANSFER_SYNTAX_UID, Vr::UI, EXPLICIT_VR_LITTLE_ENDIAN));
    meta.put(Element::text(tags::IMPLEMENTATION_CLASS_UID, Vr::UI, IMPLEMENTATION_CLASS_UID));
    meta.put(Element::text(
        tags::IMPLEMENTATION_VERSION_NAME,
        Vr::SH,
        IMPLEMENTATION_VERSION_NAME,
    ));
    meta
}
