//! Minimal data dictionary: the value representation and keyword of the
//! standard attributes this workspace reads, writes or scrubs. Implicit-VR
//! streams need it to recover VRs; tags missing here decode as `UN`.

use crate::tag::Tag;
use crate::vr::Vr;

pub struct Entry {
    pub tag: Tag,
    pub vr: Vr,
    pub keyword: &'static str,
}

macro_rules! dict {
    ($(($g:literal, $e:literal, $vr:ident, $kw:literal)),* $(,)?) => {
        &[$(Entry { tag: Tag($g, $e), vr: Vr::$vr, keyword: $kw }),*]
    };
}

/// Sorted by tag.
pub static ENTRIES: &[Entry] = dict![
    (0x0002, 0x0000, UL, "FileMetaInformationGroupLength"),
    (0x0002, 0x0001, OB, "FileMetaInformationVersion"),
    (0x0002, 0x0002, UI, "MediaStorageSOPClassUID"),
    (0x0002, 0x0003, UI, "MediaStorageSOPInstanceUID"),
    (0x0002, 0x0010, UI, "TransferSyntaxUID"),
    (0x0002, 0x0012, UI, "ImplementationClassUID"),
    (0x0002, 0x0013, SH, "ImplementationVersionName"),
    (0x0002, 0x0016, AE, "SourceApplicationEntityTitle"),
    (0x0008, 0x0005, CS, "SpecificCharacterSet"),
    (0x0008, 0x0008, CS, "ImageType"),
    (0x0008, 0x0012, DA, "InstanceCreationDate"),
    (0x0008, 0x0013, TM, "InstanceCreationTime"),
    (0x0008, 0x0016, UI, "SOPClassUID"),
    (0x0008, 0x0018, UI, "SOPInstanceUID"),
    (0x0008, 0x0020, DA, "StudyDate"),
    (0x0008, 0x0021, DA, "SeriesDate"),
    (0x0008, 0x0022, DA, "AcquisitionDate"),
    (0x0008, 0x0023, DA, "ContentDate"),
    (0x0008, 0x002A, DT, "AcquisitionDateTime"),
    (0x0008, 0x0030, TM, "StudyTime"),
    (0x0008, 0x0031, TM, "SeriesTime"),
    (0x0008, 0x0032, TM, "AcquisitionTime"),
    (0x0008, 0x0033, TM, "ContentTime"),
    (0x0008, 0x0050, SH, "AccessionNumber"),
    (0x0008, 0x0060, CS, "Modality"),
    (0x0008, 0x0070, LO, "Manufacturer"),
    (0x0008, 0x0080, LO, "InstitutionName"),
    (0x0008, 0x0081, ST, "InstitutionAddress"),
    (0x0008, 0x0090, PN, "ReferringPhysicianName"),
    (0x0008, 0x1010, SH, "StationName"),
    (0x0008, 0x1030, LO, "StudyDescription"),
    (0x0008, 0x103E, LO, "SeriesDescription"),
    (0x0008, 0x1040, LO, "InstitutionalDepartmentName"),
    (0x0008, 0x1050, PN, "PerformingPhysicianName"),
    (0x0008, 0x1060, PN, "NameOfPhysiciansReadingStudy"),
    (0x0008, 0x1070, PN, "OperatorsName"),
    (0x0008, 0x1090, LO, "ManufacturerModelName"),
    (0x0008, 0x1110, SQ, "ReferencedStudySequence"),
    (0x0008, 0x1140, SQ, "ReferencedImageSequence"),
    (0x0008, 0x1150, UI, "ReferencedSOPClassUID"),
    (0x0008, 0x1155, UI, "ReferencedSOPInstanceUID"),
    (0x0010, 0x0010, PN, "PatientName"),
    (0x0010, 0x0020, LO, "PatientID"),
    (0x0010, 0x0021, LO, "IssuerOfPatientID"),
    (0x0010, 0x0030, DA, "PatientBirthDate"),
    (0x0010, 0x0040, CS, "PatientSex"),
    (0x0010, 0x1000, LO, "OtherPatientIDs"),
    (0x0010, 0x1001, PN, "OtherPatientNames"),
    (0x0010, 0x1010, AS, "PatientAge"),
    (0x0010, 0x1020, DS, "PatientSize"),
    (0x0010, 0x1030, DS, "PatientWeight"),
    (0x0010, 0x1040, LO, "PatientAddress"),
    (0x0010, 0x2154, SH, "PatientTelephoneNumbers"),
    (0x0010, 0x2160, SH, "EthnicGroup"),
    (0x0010, 0x21A0, CS, "SmokingStatus"),
    (0x0010, 0x4000, LT, "PatientComments"),
    (0x0012, 0x0062, CS, "PatientIdentityRemoved"),
    (0x0012, 0x0063, LO, "DeidentificationMethod"),
    (0x0018, 0x0015, CS, "BodyPartExamined"),
    (0x0018, 0x0050, DS, "SliceThickness"),
    (0x0018, 0x0060, DS, "KVP"),
    (0x0018, 0x1000, LO, "DeviceSerialNumber"),
    (0x0018, 0x1020, LO, "SoftwareVersions"),
    (0x0018, 0x1030, LO, "ProtocolName"),
    (0x0018, 0x1150, IS, "ExposureTime"),
    (0x0018, 0x1151, IS, "XRayTubeCurrent"),
    (0x0018, 0x5100, CS, "PatientPosition"),
    (0x0020, 0x000D, UI, "StudyInstanceUID"),
    (0x0020, 0x000E, UI, "SeriesInstanceUID"),
    (0x0020, 0x0010, SH, "StudyID"),
    (0x0020, 0x0011, IS, "SeriesNumber"),
    (0x0020, 0x0012, IS, "AcquisitionNumber"),
    (0x0020, 0x0013, IS, "InstanceNumber"),
    (0x0020, 0x0032, DS, "ImagePositionPatient"),
    (0x0020, 0x0037, DS, "ImageOrientationPatient"),
    (0x0020, 0x0052, UI, "FrameOfReferenceUID"),
    (0x0020, 0x1041, DS, "SliceLocation"),
    (0x0020, 0x4000, LT, "ImageComments"),
    (0x0028, 0x0002, US, "SamplesPerPixel"),
    (0x0028, 0x0004, CS, "PhotometricInterpretation"),
    (0x0028, 0x0008, IS, "NumberOfFrames"),
    (0x0028, 0x0010, US, "Rows"),
    (0x0028, 0x0011, US, "Columns"),
    (0x0028, 0x0030, DS, "PixelSpacing"),
    (0x0028, 0x0100, US, "BitsAllocated"),
    (0x0028, 0x0101, US, "BitsStored"),
    (0x0028, 0x0102, US, "HighBit"),
    (0x0028, 0x0103, US, "PixelRepresentation"),
    (0x0028, 0x0106, SS, "SmallestImagePixelValue"),
    (0x0028, 0x0107, SS, "LargestImagePixelValue"),
    (0x0028, 0x1050, DS, "WindowCenter"),
    (0x0028, 0x1051, DS, "WindowWidth"),
    (0x0028, 0x1052, DS, "RescaleIntercept"),
    (0x0028, 0x1053, DS, "RescaleSlope"),
    (0x0028, 0x1054, LO, "RescaleType"),
    (0x0032, 0x1032, PN, "RequestingPhysician"),
    (0x0040, 0x0244, DA, "PerformedProcedureStepStartDate"),
    (0x0040, 0x0253, SH, "PerformedProcedureStepID"),
    (0x0040, 0xA124, UI, "UID"),
    (0x0054, 0x1001, CS, "Units"),
    (0x0070, 0x0084, PN, "ContentCreatorName"),
    (0x3006, 0x0024, UI, "ReferencedFrameOfReferenceUID"),
    (0x7FE0, 0x0010, OW, "PixelData"),
];

pub fn lookup(tag: Tag) -> Option<&'static Entry> {
    ENTRIES
        .binary_search_by(|e| e.tag.cmp(&tag))
        .ok()
        .map(|i| &ENTRIES[i])
}

pub fn by_keyword(keyword: &str) -> Option<&'static Entry> {
    ENTRIES.iter().find(|e| e.keyword == keyword)
}

/// VR used when decoding an implicit-VR element.
pub fn implicit_vr(tag: Tag) -> Vr {
    if tag.is_group_length() {
        return Vr::UL;
    }
    if tag.is_private() && (0x0010..=0x00FF).contains(&tag.element()) {
        return Vr::LO;
    }
    lookup(tag).map_or(Vr::UN, |e| e.vr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_sorted_and_unique() {
        assert!(ENTRIES.windows(2).all(|w| w[0].tag < w[1].tag));
    }

    #[test]
    fn lookups() {
        assert_eq!(lookup(Tag(0x0010, 0x0010)).unwrap().keyword, "PatientName");
        assert_eq!(by_keyword("PixelData").unwrap().tag, Tag(0x7FE0, 0x0010));
        assert_eq!(implicit_vr(Tag(0x0009, 0x0010)), Vr::LO);
        assert_eq!(implicit_vr(Tag(0x0009, 0x1001)), Vr::UN);
        assert_eq!(implicit_vr(Tag(0x0018, 0x0000)), Vr::UL);
    }
}
