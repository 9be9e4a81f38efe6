use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::deid::SourceSystem;

/// Sources that feed text records (PACS arrives separately as DICOM).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Crm,
    Ris,
    Ehr,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Crm, Source::Ris, Source::Ehr];

    pub fn system(self) -> SourceSystem {
        match self {
            Source::Crm => SourceSystem::Crm,
            Source::Ris => SourceSystem::Ris,
            Source::Ehr => SourceSystem::Ehr,
        }
    }

    /// Lowercase name used for inbox directories and push URLs.
    pub fn slug(self) -> &'static str {
        match self {
            Source::Crm => "crm",
            Source::Ris => "ris",
            Source::Ehr => "ehr",
        }
    }

    pub fn from_slug(s: &str) -> Option<Source> {
        Source::ALL.into_iter().find(|src| src.slug() == s)
    }

    pub fn topic(self) -> &'static str {
        match self {
            Source::Crm => super::TOPIC_PARTICIPANTS,
            Source::Ris => super::TOPIC_RIS,
            Source::Ehr => super::TOPIC_EHR,
        }
    }

    pub fn accepts(self, format: Format) -> bool {
        matches!(
            (self, format),
            (Source::Crm, Format::Csv)
                | (Source::Ris, Format::Csv | Format::Txt)
                | (Source::Ehr, Format::Json | Format::Xml)
        )
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.system().as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Format {
    Csv,
    Txt,
    Json,
    Xml,
}

impl Format {
    pub fn from_extension(ext: &str) -> Option<Format> {
        match ext.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "txt" => Some(Format::Txt),
            "json" => Some(Format::Json),
            "xml" => Some(Format::Xml),
            _ => None,
        }
    }

    /// Maps a `Content-Type` header value (parameters ignored).
    pub fn from_content_type(ct: &str) -> Option<Format> {
        let mime = ct.split(';').next()?.trim().to_ascii_lowercase();
        match mime.as_str() {
            "text/csv" => Some(Format::Csv),
            "text/plain" => Some(Format::Txt),
            "application/json" => Some(Format::Json),
            "application/xml" | "text/xml" => Some(Format::Xml),
            _ => None,
        }
    }
}

/// One logical row or document as received, before harmonization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawSourceRecord {
    pub source: Source,
    pub format: Format,
    /// File path or push request id, with a row suffix for multi-row files.
    pub origin: String,
    #[serde(serialize_with = "payload_as_text")]
    pub payload: Vec<u8>,
    pub received_at: DateTime<Utc>,
}

fn payload_as_text<S: Serializer>(payload: &[u8], s: S) -> Result<S::Ok, S::Error> {
    match std::str::from_utf8(payload) {
        Ok(text) => s.serialize_str(text),
        Err(_) => s.serialize_str(&format!("hex:{}", hex::encode(payload))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    U,
}

/// Either a number of years or a current smoker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YearsSinceQuit {
    Years(f64),
    Current,
}

impl Serialize for YearsSinceQuit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            YearsSinceQuit::Years(y) => s.serialize_f64(*y),
            YearsSinceQuit::Current => s.serialize_str("current"),
        }
    }
}

impl<'de> Deserialize<'de> for YearsSinceQuit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Years(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Years(y) => Ok(YearsSinceQuit::Years(y)),
            Repr::Text(t) if t == "current" => Ok(YearsSinceQuit::Current),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected years or \"current\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalParticipant {
    pub source_external_id: String,
    pub full_name: String,
    pub birth_date: NaiveDate,
    pub sex: Sex,
    pub phone: String,
    pub smoking_pack_years: f64,
    pub years_since_quit: YearsSinceQuit,
    pub consent: bool,
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalStudyReport {
    pub accession: String,
    pub source_external_id: String,
    pub modality: String,
    pub study_date: NaiveDate,
    pub report_text: String,
    pub radiologist_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClinicalKind {
    Diagnosis,
    Vitals,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalClinicalEvent {
    pub source_external_id: String,
    pub event_date: NaiveDate,
    pub kind: ClinicalKind,
    /// Diagnosis code, or the measurement name for vitals.
    pub code: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityResult {
    pub eligible: bool,
    pub reasons: Vec<String>,
    pub evaluated_at: DateTime<Utc>,
    pub ruleset_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuarantineEntry {
    pub raw: RawSourceRecord,
    pub reason: String,
    pub quarantined_at: DateTime<Utc>,
}

/// Accepted date spellings: ISO, `DD/MM/YYYY` and `DD.MM.YYYY`.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    ["%Y-%m-%d", "%d/%m/%Y", "%d.%m.%Y"]
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

/// RFC 3339 timestamp, or any accepted date taken as midnight UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(s) {
        return Some(ts.with_timezone(&Utc));
    }
    parse_date(s).map(|d| d.and_time(NaiveTime::MIN).and_utc())
}
