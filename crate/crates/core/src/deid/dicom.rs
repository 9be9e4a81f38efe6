use chrono::{Days, NaiveDate};
use screenforge_dicom::{tags, Dataset, DicomFile, Element, Tag, Value, Vr};
use serde::Serialize;

use super::policy::Action;
use super::text::{needles_for, redact, Needle};
use super::vault::{Pseudonym, SourceSystem};
use super::{DeidError, Deidentifier};

/// One change made by [`Deidentifier::deid_dicom`]. Records what was done
/// to which element, never the original value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    /// Tag path, e.g. `(0008,1140)[0](0008,1155)` inside a sequence.
    pub path: String,
    pub action: String,
}

pub type DeidAudit = Vec<AuditEntry>;

const METHOD_PREFIX: &str = "SCREENFORGE DEID ";

struct Context<'a> {
    deid: &'a Deidentifier,
    pseudonym: Pseudonym,
    offset_days: i64,
    /// Input was already de-identified under this key: skip the
    /// non-idempotent rewrites.
    already_done: bool,
    /// Identity strings scrubbed from kept free-text values.
    needles: Vec<Needle>,
    audit: DeidAudit,
}

impl Deidentifier {
    fn method_marker(&self) -> String {
        format!("{METHOD_PREFIX}{}", self.key.fingerprint())
    }

    /// Applies the DICOM policy. Nothing partially scrubbed is ever
    /// returned: any failure aborts the whole file.
    pub fn deid_dicom(&self, file: &DicomFile) -> Result<(DicomFile, DeidAudit), DeidError> {
        let patient_id = file
            .dataset
            .text(tags::PATIENT_ID)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| DeidError::DeidRefused("PatientID missing or empty".into()))?;

        let marked = file.dataset.text(tags::DEIDENTIFICATION_METHOD).as_deref()
            == Some(self.method_marker().as_str())
            && self.vault.contains_pseudonym(&patient_id);
        let pseudonym = if marked {
            patient_id.parse()?
        } else {
            self.vault
                .pseudonymize(&self.key, SourceSystem::Pacs, &patient_id)
                .map_err(|e| DeidError::DeidRefused(format!("identity unresolved: {e}")))?
        };
        let mut needles = self.needles(&pseudonym);
        let own_name = file.dataset.text(tags::PATIENT_NAME).unwrap_or_default();
        let own_phone = file.dataset.text(tags::PATIENT_TELEPHONE_NUMBERS).unwrap_or_default();
        let own_ids = if marked { Vec::new() } else { vec![patient_id.clone()] };
        for n in needles_for(&own_name.replace('^', " "), &own_phone, &own_ids) {
            if !needles.contains(&n) {
                needles.push(n);
            }
        }
        let mut ctx = Context {
            deid: self,
            offset_days: self.date_shift_offset(&pseudonym),
            pseudonym,
            already_done: marked,
            needles,
            audit: Vec::new(),
        };

        let mut dataset = file.dataset.clone();
        scrub(&mut ctx, &mut dataset, "")?;
        for (tag, vr, value) in [
            (tags::PATIENT_IDENTITY_REMOVED, Vr::CS, "YES".to_string()),
            (tags::DEIDENTIFICATION_METHOD, Vr::LO, self.method_marker()),
        ] {
            if dataset.text(tag).as_deref() != Some(value.as_str()) {
                dataset.put(Element::text(tag, vr, &value));
                ctx.audit.push(AuditEntry {
                    path: tag.to_string(),
                    action: "MARK".into(),
                });
            }
        }

        let mut out = DicomFile::new(dataset);
        out.preamble = [0; 128];
        Ok((out, ctx.audit))
    }
}

fn scrub(ctx: &mut Context<'_>, ds: &mut Dataset, prefix: &str) -> Result<(), DeidError> {
    let policy = &ctx.deid.policy;
    let tags: Vec<Tag> = ds.tags().collect();
    for tag in tags {
        let path = format!("{prefix}{tag}");
        if policy.remove_private_tags && tag.is_private() {
            ds.remove(tag);
            ctx.audit.push(AuditEntry {
                path,
                action: "REMOVE_PRIVATE".into(),
            });
            continue;
        }
        let action = policy.action(tag);
        let element = ds.get_mut(tag).unwrap();
        if let Value::Sequence(items) = &mut element.value {
            if action == Action::Remove {
                ds.remove(tag);
                ctx.audit.push(AuditEntry {
                    path,
                    action: action.to_string(),
                });
                continue;
            }
            for (i, item) in items.iter_mut().enumerate() {
                scrub(ctx, item, &format!("{path}[{i}]"))?;
            }
            continue;
        }
        let before = element.bytes().unwrap_or_default().to_vec();
        let after: Option<Vec<u8>> = match action {
            Action::Keep if is_free_text(element.vr) => Some(redact_text(&before, &ctx.needles)),
            Action::Keep => Some(before.clone()),
            Action::Remove => None,
            Action::Blank => Some(Vec::new()),
            Action::ReplacePseudonym => Some(ctx.pseudonym.as_str().as_bytes().to_vec()),
            Action::DateShift if ctx.already_done => Some(before.clone()),
            Action::DateShift => Some(shift_dicom_dates(&before, element.vr, ctx.offset_days)),
            Action::UidRemap if ctx.already_done => Some(before.clone()),
            Action::UidRemap => Some(remap_values(ctx.deid, &before)?),
        };
        match after {
            None => {
                ds.remove(tag);
            }
            Some(bytes) if normalized(&bytes, element.vr) == normalized(&before, element.vr) => {
                continue
            }
            Some(bytes) => {
                element.value = Value::Bytes(bytes);
            }
        }
        let action = match action {
            Action::Keep => "REDACT_TEXT".to_string(),
            other => other.to_string(),
        };
        ctx.audit.push(AuditEntry { path, action });
    }
    Ok(())
}

/// Value bytes as they will be serialized (odd lengths padded).
fn normalized(bytes: &[u8], vr: Vr) -> Vec<u8> {
    let mut b = bytes.to_vec();
    if b.len() % 2 == 1 {
        b.push(vr.padding());
    }
    b
}

fn is_free_text(vr: Vr) -> bool {
    matches!(vr, Vr::LO | Vr::SH | Vr::ST | Vr::LT | Vr::PN)
}

/// Kept text can still mention the patient (a study description typed at
/// the scanner, say), so it goes through the same redaction as free text.
fn redact_text(bytes: &[u8], needles: &[Needle]) -> Vec<u8> {
    let text = String::from_utf8_lossy(bytes);
    let out = redact(&text, needles);
    if out == text {
        bytes.to_vec()
    } else {
        out.into_bytes()
    }
}

fn text_values(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes)
        .trim_end_matches(['\0', ' '])
        .split('\\')
        .map(|s| s.trim().to_string())
        .collect()
}

fn remap_values(deid: &Deidentifier, bytes: &[u8]) -> Result<Vec<u8>, DeidError> {
    let values = text_values(bytes);
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        out.push(if v.is_empty() { v } else { deid.remap_uid(&v)? });
    }
    Ok(out.join("\\").into_bytes())
}

/// Shifts each DA value, or the date part of each DT value. Values that do
/// not parse as dates are blanked rather than passed through.
fn shift_dicom_dates(bytes: &[u8], vr: Vr, days: i64) -> Vec<u8> {
    let shifted: Vec<String> = text_values(bytes)
        .into_iter()
        .map(|v| {
            if v.is_empty() || v.len() < 8 || !(vr == Vr::DA || vr == Vr::DT || vr == Vr::UN) {
                return String::new();
            }
            match NaiveDate::parse_from_str(&v[..8], "%Y%m%d") {
                Ok(d) => match shift_date(d, days) {
                    Some(d) => format!("{}{}", d.format("%Y%m%d"), &v[8..]),
                    None => String::new(),
                },
                Err(_) => String::new(),
            }
        })
        .collect();
    if shifted.iter().all(String::is_empty) {
        return Vec::new();
    }
    shifted.join("\\").into_bytes()
}

pub(crate) fn shift_date(d: NaiveDate, days: i64) -> Option<NaiveDate> {
    if days >= 0 {
        d.checked_add_days(Days::new(days as u64))
    } else {
        d.checked_sub_days(Days::new(days.unsigned_abs()))
    }
}
