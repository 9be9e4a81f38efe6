//! Source formats and their mapping onto canonical records.
//!
//! Column and key names are documented with fixtures under `docs/formats/`.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde_json::Value;

use super::model::*;

pub const CRM_COLUMNS: [&str; 9] = [
    "external_id",
    "full_name",
    "birth_date",
    "sex",
    "phone",
    "pack_years",
    "years_since_quit",
    "consent",
    "registered_at",
];

pub const RIS_COLUMNS: [&str; 6] = [
    "accession",
    "patient_id",
    "modality",
    "study_date",
    "report_text",
    "radiologist_id",
];

/// `KEY: value` names in RIS text blocks, paired with the CSV column.
pub const RIS_TXT_KEYS: [(&str, &str); 6] = [
    ("ACCESSION", "accession"),
    ("PATIENT", "patient_id"),
    ("MODALITY", "modality"),
    ("DATE", "study_date"),
    ("REPORT", "report_text"),
    ("RADIOLOGIST", "radiologist_id"),
];

pub mod reason {
    pub const CONSENT_ABSENT: &str = "CONSENT_ABSENT";
    pub const DUP_ACCESSION: &str = "DUP_ACCESSION";
    pub const DUP_EXTERNAL_ID: &str = "DUP_EXTERNAL_ID";
    pub const UNDECODABLE: &str = "UNDECODABLE";
    pub const UNSUPPORTED_FORMAT: &str = "UNSUPPORTED_FORMAT";
    pub const IO: &str = "IO";

    pub fn missing(field: &str) -> String {
        format!("MISSING_FIELD:{field}")
    }

    pub fn invalid(field: &str) -> String {
        format!("INVALID_VALUE:{field}")
    }
}

fn columns_for(source: Source) -> &'static [&'static str] {
    match source {
        Source::Crm => &CRM_COLUMNS,
        _ => &RIS_COLUMNS,
    }
}

/// Splits a received file or push body into one raw record per row (CSV),
/// block (TXT) or document (JSON, XML). The error is a quarantine reason
/// for the body as a whole.
pub fn split(
    source: Source,
    format: Format,
    origin: &str,
    bytes: &[u8],
    received_at: DateTime<Utc>,
) -> Result<Vec<RawSourceRecord>, String> {
    if !source.accepts(format) {
        return Err(reason::UNSUPPORTED_FORMAT.into());
    }
    let raw = |suffix: String, payload: Vec<u8>| RawSourceRecord {
        source,
        format,
        origin: format!("{origin}{suffix}"),
        payload,
        received_at,
    };
    match format {
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(bytes);
            let mut rows = Vec::new();
            for row in reader.byte_records() {
                rows.push(row.map_err(|_| reason::UNDECODABLE.to_string())?);
            }
            let expected = columns_for(source);
            let has_header = rows
                .first()
                .is_some_and(|r| r.get(0).map(|f| trim_bytes(f)) == Some(expected[0].as_bytes()));
            let header: csv::ByteRecord = if has_header {
                rows.remove(0)
            } else {
                expected.iter().copied().collect()
            };
            Ok(rows
                .into_iter()
                .enumerate()
                .filter(|(_, r)| !r.iter().all(|f| trim_bytes(f).is_empty()))
                .map(|(i, row)| {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_byte_record(&header).unwrap();
                    w.write_byte_record(&row).unwrap();
                    raw(format!("#row{}", i + 1), w.into_inner().unwrap())
                })
                .collect())
        }
        Format::Txt => {
            let text = std::str::from_utf8(bytes).map_err(|_| reason::UNDECODABLE.to_string())?;
            let mut blocks = Vec::new();
            let mut current: Vec<&str> = Vec::new();
            for line in text.lines().chain(std::iter::once("")) {
                if line.trim().is_empty() {
                    if !current.is_empty() {
                        blocks.push(current.join("\n"));
                        current.clear();
                    }
                } else {
                    current.push(line);
                }
            }
            Ok(blocks
                .into_iter()
                .enumerate()
                .map(|(i, b)| raw(format!("#block{}", i + 1), b.into_bytes()))
                .collect())
        }
        Format::Json | Format::Xml => Ok(vec![raw(String::new(), bytes.to_vec())]),
    }
}

fn trim_bytes(b: &[u8]) -> &[u8] {
    let start = b.iter().position(|c| !c.is_ascii_whitespace()).unwrap_or(b.len());
    let end = b.iter().rposition(|c| !c.is_ascii_whitespace()).map_or(start, |e| e + 1);
    &b[start..end]
}

/// Field map of a one-row CSV or a TXT block, values trimmed.
fn fields(raw: &RawSourceRecord) -> Result<HashMap<String, String>, String> {
    let text = std::str::from_utf8(&raw.payload).map_err(|_| reason::UNDECODABLE.to_string())?;
    match raw.format {
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(true)
                .from_reader(text.as_bytes());
            let header = reader.headers().map_err(|_| reason::UNDECODABLE)?.clone();
            let row = reader
                .records()
                .next()
                .ok_or_else(|| reason::UNDECODABLE.to_string())?
                .map_err(|_| reason::UNDECODABLE.to_string())?;
            Ok(header
                .iter()
                .zip(row.iter())
                .map(|(h, v)| (h.trim().to_string(), v.trim().to_string()))
                .collect())
        }
        Format::Txt => {
            let mut out = HashMap::new();
            let mut last: Option<&str> = None;
            for line in text.lines() {
                let key = line.split_once(':').and_then(|(k, v)| {
                    RIS_TXT_KEYS
                        .iter()
                        .find(|(name, _)| *name == k.trim())
                        .map(|(_, col)| (*col, v))
                });
                match key {
                    Some((col, v)) => {
                        out.insert(col.to_string(), v.trim().to_string());
                        last = Some(col);
                    }
                    // Continuation of a multi-line value.
                    None => match last {
                        Some(col) => {
                            let entry: &mut String = out.get_mut(col).unwrap();
                            entry.push('\n');
                            entry.push_str(line.trim());
                        }
                        None => return Err(reason::UNDECODABLE.into()),
                    },
                }
            }
            Ok(out)
        }
        _ => Err(reason::UNSUPPORTED_FORMAT.into()),
    }
}

fn required<'a>(f: &'a HashMap<String, String>, name: &str) -> Result<&'a str, String> {
    f.get(name)
        .map(String::as_str)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| reason::missing(name))
}

fn decimal(s: &str, field: &str) -> Result<f64, String> {
    match s.trim().replace(',', ".").parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(reason::invalid(field)),
    }
}

fn consent(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "y" | "yes" | "1" | "true")
}

pub fn harmonize_participant(raw: &RawSourceRecord) -> Result<CanonicalParticipant, String> {
    if raw.source != Source::Crm {
        return Err(reason::UNSUPPORTED_FORMAT.into());
    }
    let f = fields(raw)?;
    let external_id = required(&f, "external_id")?;
    let full_name = required(&f, "full_name")?;
    let registered_at = parse_timestamp(required(&f, "registered_at")?)
        .ok_or_else(|| reason::invalid("registered_at"))?;
    let birth_date =
        parse_date(required(&f, "birth_date")?).ok_or_else(|| reason::invalid("birth_date"))?;
    if birth_date >= registered_at.date_naive() {
        return Err(reason::invalid("birth_date"));
    }
    let sex = match f.get("sex").map(|s| s.to_ascii_uppercase()).as_deref() {
        Some("F") | Some("FEMALE") => Sex::F,
        Some("M") | Some("MALE") => Sex::M,
        Some("U") | Some("") | None => Sex::U,
        Some(_) => return Err(reason::invalid("sex")),
    };
    let smoking_pack_years = decimal(required(&f, "pack_years")?, "pack_years")?;
    let years_since_quit = match f.get("years_since_quit").map(|s| s.to_ascii_lowercase()) {
        None => YearsSinceQuit::Current,
        Some(s) if s.is_empty() || s == "current" => YearsSinceQuit::Current,
        Some(s) => YearsSinceQuit::Years(decimal(&s, "years_since_quit")?),
    };
    let consent = consent(f.get("consent").map(String::as_str).unwrap_or(""));
    if !consent {
        return Err(reason::CONSENT_ABSENT.into());
    }
    Ok(CanonicalParticipant {
        source_external_id: external_id.to_string(),
        full_name: full_name.to_string(),
        birth_date,
        sex,
        phone: f.get("phone").cloned().unwrap_or_default(),
        smoking_pack_years,
        years_since_quit,
        consent,
        registered_at,
    })
}

pub fn harmonize_ris(raw: &RawSourceRecord) -> Result<CanonicalStudyReport, String> {
    if raw.source != Source::Ris {
        return Err(reason::UNSUPPORTED_FORMAT.into());
    }
    let f = fields(raw)?;
    Ok(CanonicalStudyReport {
        accession: required(&f, "accession")?.to_string(),
        source_external_id: required(&f, "patient_id")?.to_string(),
        modality: f.get("modality").cloned().unwrap_or_default(),
        study_date: parse_date(required(&f, "study_date")?)
            .ok_or_else(|| reason::invalid("study_date"))?,
        report_text: f.get("report_text").cloned().unwrap_or_default(),
        radiologist_id: f.get("radiologist_id").cloned().unwrap_or_default(),
    })
}

struct PatientDoc {
    id: String,
    diagnoses: Vec<(String, String, String)>,
    vitals: Vec<(String, String, String)>,
}

fn json_text(v: Option<&Value>) -> String {
    match v {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::Bool(b)) => b.to_string(),
        _ => String::new(),
    }
}

fn ehr_json(bytes: &[u8]) -> Result<Vec<PatientDoc>, String> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|_| reason::UNDECODABLE.to_string())?;
    let patients = match doc {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => return Err(reason::UNDECODABLE.into()),
    };
    patients
        .iter()
        .map(|p| {
            let list = |name: &str, keys: [&str; 3]| -> Result<Vec<(String, String, String)>, String> {
                match p.get(name) {
                    None | Some(Value::Null) => Ok(Vec::new()),
                    Some(Value::Array(items)) => Ok(items
                        .iter()
                        .map(|i| {
                            (
                                json_text(i.get(keys[0])),
                                json_text(i.get(keys[1])),
                                json_text(i.get(keys[2])),
                            )
                        })
                        .collect()),
                    Some(_) => Err(reason::UNDECODABLE.into()),
                }
            };
            Ok(PatientDoc {
                id: json_text(p.get("patient_id")),
                diagnoses: list("diagnoses", ["date", "code", "description"])?,
                vitals: list("vitals", ["date", "name", "value"])?,
            })
        })
        .collect()
}

fn ehr_xml(bytes: &[u8]) -> Result<Vec<PatientDoc>, String> {
    let text = std::str::from_utf8(bytes).map_err(|_| reason::UNDECODABLE.to_string())?;
    let doc = roxmltree::Document::parse(text).map_err(|_| reason::UNDECODABLE.to_string())?;
    let root = doc.root_element();
    if root.tag_name().name() != "ehr" {
        return Err(reason::UNDECODABLE.into());
    }
    let attr = |n: roxmltree::Node, a: &str| n.attribute(a).unwrap_or("").trim().to_string();
    Ok(root
        .children()
        .filter(|n| n.has_tag_name("patient"))
        .map(|p| PatientDoc {
            id: attr(p, "id"),
            diagnoses: p
                .children()
                .filter(|n| n.has_tag_name("diagnosis"))
                .map(|n| (attr(n, "date"), attr(n, "code"), attr(n, "description")))
                .collect(),
            vitals: p
                .children()
                .filter(|n| n.has_tag_name("vital"))
                .map(|n| (attr(n, "date"), attr(n, "name"), attr(n, "value")))
                .collect(),
        })
        .collect())
}

/// One event per diagnosis and vital: per patient, diagnoses first, then
/// vitals, each in document order.
pub fn harmonize_ehr(raw: &RawSourceRecord) -> Result<Vec<CanonicalClinicalEvent>, String> {
    let patients = match raw.format {
        Format::Json => ehr_json(&raw.payload)?,
        Format::Xml => ehr_xml(&raw.payload)?,
        _ => return Err(reason::UNSUPPORTED_FORMAT.into()),
    };
    let mut events = Vec::new();
    for p in patients {
        if p.id.is_empty() {
            return Err(reason::missing("patient_id"));
        }
        let kinds = [(ClinicalKind::Diagnosis, p.diagnoses), (ClinicalKind::Vitals, p.vitals)];
        for (kind, entries) in kinds {
            for (date, code, value) in entries {
                let event_date = parse_date(&date).ok_or_else(|| reason::invalid("event_date"))?;
                if code.is_empty() {
                    return Err(reason::missing("code"));
                }
                events.push(CanonicalClinicalEvent {
                    source_external_id: p.id.clone(),
                    event_date,
                    kind,
                    code,
                    value,
                });
            }
        }
    }
    Ok(events)
}
