use std::fmt;
use std::str::FromStr;

/// A DICOM attribute tag, ordered by group then element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl Tag {
    pub const fn group(self) -> u16 {
        self.0
    }

    pub const fn element(self) -> u16 {
        self.1
    }

    /// Odd groups are reserved for private data.
    pub const fn is_private(self) -> bool {
        self.0 % 2 == 1
    }

    pub const fn is_file_meta(self) -> bool {
        self.0 == 0x0002
    }

    pub const fn is_group_length(self) -> bool {
        self.1 == 0x0000
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid tag {0:?}: expected gggg,eeee in hex")]
pub struct ParseTagError(String);

impl FromStr for Tag {
    type Err = ParseTagError;

    /// Accepts `gggg,eeee`, optionally wrapped in parentheses.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTagError(s.to_string());
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (g, e) = inner.split_once(',').ok_or_else(err)?;
        let (g, e) = (g.trim(), e.trim());
        if g.len() != 4 || e.len() != 4 {
            return Err(err());
        }
        let group = u16::from_str_radix(g, 16).map_err(|_| err())?;
        let element = u16::from_str_radix(e, 16).map_err(|_| err())?;
        Ok(Tag(group, element))
    }
}

/// Tags referenced by name elsewhere in the workspace.
pub mod tags {
    use super::Tag;

    pub const FILE_META_GROUP_LENGTH: Tag = Tag(0x0002, 0x0000);
    pub const FILE_META_INFORMATION_VERSION: Tag = Tag(0x0002, 0x0001);
    pub const MEDIA_STORAGE_SOP_CLASS_UID: Tag = Tag(0x0002, 0x0002);
    pub const MEDIA_STORAGE_SOP_INSTANCE_UID: Tag = Tag(0x0002, 0x0003);
    pub const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
    pub const IMPLEMENTATION_CLASS_UID: Tag = Tag(0x0002, 0x0012);
    pub const IMPLEMENTATION_VERSION_NAME: Tag = Tag(0x0002, 0x0013);

    pub const SPECIFIC_CHARACTER_SET: Tag = Tag(0x0008, 0x0005);
    pub const SOP_CLASS_UID: Tag = Tag(0x0008, 0x0016);
    pub const SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x0018);
    pub const STUDY_DATE: Tag = Tag(0x0008, 0x0020);
    pub const SERIES_DATE: Tag = Tag(0x0008, 0x0021);
    pub const ACQUISITION_DATE: Tag = Tag(0x0008, 0x0022);
    pub const CONTENT_DATE: Tag = Tag(0x0008, 0x0023);
    pub const ACQUISITION_DATE_TIME: Tag = Tag(0x0008, 0x002A);
    pub const STUDY_TIME: Tag = Tag(0x0008, 0x0030);
    pub const ACCESSION_NUMBER: Tag = Tag(0x0008, 0x0050);
    pub const MODALITY: Tag = Tag(0x0008, 0x0060);
    pub const INSTITUTION_NAME: Tag = Tag(0x0008, 0x0080);
    pub const INSTITUTION_ADDRESS: Tag = Tag(0x0008, 0x0081);
    pub const REFERRING_PHYSICIAN_NAME: Tag = Tag(0x0008, 0x0090);
    pub const STATION_NAME: Tag = Tag(0x0008, 0x1010);
    pub const STUDY_DESCRIPTION: Tag = Tag(0x0008, 0x1030);
    pub const SERIES_DESCRIPTION: Tag = Tag(0x0008, 0x103E);
    pub const PERFORMING_PHYSICIAN_NAME: Tag = Tag(0x0008, 0x1050);
    pub const OPERATORS_NAME: Tag = Tag(0x0008, 0x1070);
    pub const REFERENCED_STUDY_SEQUENCE: Tag = Tag(0x0008, 0x1110);
    pub const REFERENCED_SOP_CLASS_UID: Tag = Tag(0x0008, 0x1150);
    pub const REFERENCED_SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x1155);

    pub const PATIENT_NAME: Tag = Tag(0x0010, 0x0010);
    pub const PATIENT_ID: Tag = Tag(0x0010, 0x0020);
    pub const ISSUER_OF_PATIENT_ID: Tag = Tag(0x0010, 0x0021);
    pub const PATIENT_BIRTH_DATE: Tag = Tag(0x0010, 0x0030);
    pub const PATIENT_SEX: Tag = Tag(0x0010, 0x0040);
    pub const OTHER_PATIENT_IDS: Tag = Tag(0x0010, 0x1000);
    pub const OTHER_PATIENT_NAMES: Tag = Tag(0x0010, 0x1001);
    pub const PATIENT_AGE: Tag = Tag(0x0010, 0x1010);
    pub const PATIENT_ADDRESS: Tag = Tag(0x0010, 0x1040);
    pub const PATIENT_TELEPHONE_NUMBERS: Tag = Tag(0x0010, 0x2154);
    pub const ETHNIC_GROUP: Tag = Tag(0x0010, 0x2160);
    pub const PATIENT_COMMENTS: Tag = Tag(0x0010, 0x4000);

    pub const PATIENT_IDENTITY_REMOVED: Tag = Tag(0x0012, 0x0062);
    pub const DEIDENTIFICATION_METHOD: Tag = Tag(0x0012, 0x0063);

    pub const SLICE_THICKNESS: Tag = Tag(0x0018, 0x0050);
    pub const DEVICE_SERIAL_NUMBER: Tag = Tag(0x0018, 0x1000);

    pub const STUDY_INSTANCE_UID: Tag = Tag(0x0020, 0x000D);
    pub const SERIES_INSTANCE_UID: Tag = Tag(0x0020, 0x000E);
    pub const STUDY_ID: Tag = Tag(0x0020, 0x0010);
    pub const SERIES_NUMBER: Tag = Tag(0x0020, 0x0011);
    pub const INSTANCE_NUMBER: Tag = Tag(0x0020, 0x0013);
    pub const IMAGE_POSITION_PATIENT: Tag = Tag(0x0020, 0x0032);
    pub const FRAME_OF_REFERENCE_UID: Tag = Tag(0x0020, 0x0052);

    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const PHOTOMETRIC_INTERPRETATION: Tag = Tag(0x0028, 0x0004);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = Tag(0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
    pub const HIGH_BIT: Tag = Tag(0x0028, 0x0102);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const WINDOW_CENTER: Tag = Tag(0x0028, 0x1050);
    pub const WINDOW_WIDTH: Tag = Tag(0x0028, 0x1051);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);

    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

    pub const ITEM: Tag = Tag(0xFFFE, 0xE000);
    pub const ITEM_DELIMITATION: Tag = Tag(0xFFFE, 0xE00D);
    pub const SEQUENCE_DELIMITATION: Tag = Tag(0xFFFE, 0xE0DD);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_group_then_element() {
        let mut v = vec![Tag(0x0010, 0x0020), Tag(0x0008, 0xFFFF), Tag(0x0010, 0x0010)];
        v.sort();
        assert_eq!(v, vec![Tag(0x0008, 0xFFFF), Tag(0x0010, 0x0010), Tag(0x0010, 0x0020)]);
    }

    #[test]
    fn private_iff_odd_group() {
        assert!(Tag(0x0009, 0x0010).is_private());
        assert!(!Tag(0x0010, 0x0010).is_private());
    }

    #[test]
    fn parse_and_display() {
        let t: Tag = "(0010,0010)".parse().unwrap();
        assert_eq!(t, tags::PATIENT_NAME);
        assert_eq!("7fe0,0010".parse::<Tag>().unwrap(), tags::PIXEL_DATA);
        assert_eq!(t.to_string(), "(0010,0010)");
        assert!("0010-0010".parse::<Tag>().is_err());
    }
}
