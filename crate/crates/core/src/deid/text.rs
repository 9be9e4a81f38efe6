use chrono::{DateTime, Datelike, NaiveDate};
use serde_json::{Map, Value};

use super::dicom::shift_date;
use super::policy::TextAction;
use super::vault::{Pseudonym, SourceSystem};
use super::{DeidError, Deidentifier};

pub const REDACTED: &str = "[REDACTED]";

/// Field every de-identified text record carries.
pub const MARKER_FIELD: &str = "deid";
pub const PSEUDONYM_FIELD: &str = "pseudonym";
pub const IDENTITY_FIELD: &str = "source_external_id";

/// A string to scrub from free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Needle {
    pub text: String,
    /// Only match when not flanked by letters or digits.
    pub whole_word: bool,
}

/// Name parts, full names, phones and external ids of one identity.
pub fn needles_for(full_name: &str, phone: &str, external_ids: &[String]) -> Vec<Needle> {
    let mut out = Vec::new();
    let mut push = |text: &str, whole_word: bool| {
        let text = text.trim();
        if text.chars().count() >= 2 && !out.iter().any(|n: &Needle| n.text == text) {
            out.push(Needle {
                text: text.to_string(),
                whole_word,
            });
        }
    };
    push(full_name, false);
    for token in full_name.split(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'') {
        push(token, true);
    }
    push(phone, false);
    let digits: String = phone.chars().filter(char::is_ascii_digit).collect();
    if digits.len() >= 6 {
        push(&digits, false);
    }
    for id in external_ids {
        push(id, true);
    }
    out
}

fn fold(s: &str) -> Option<String> {
    let lower = s.to_lowercase();
    (lower.len() == s.len()).then_some(lower)
}

/// Replaces every case-insensitive occurrence of a needle with
/// `[REDACTED]`, longest needle first. Existing markers are left alone, so
/// the function is idempotent.
pub fn redact(text: &str, needles: &[Needle]) -> String {
    let folded = fold(text);
    let haystack = folded.as_deref().unwrap_or(text);
    let bytes = haystack.as_bytes();

    let mut taken = vec![false; bytes.len()];
    let lower_marker = REDACTED.to_lowercase();
    let marker = if folded.is_some() { lower_marker.as_str() } else { REDACTED };
    for (start, _) in haystack.match_indices(marker) {
        taken[start..start + marker.len()].fill(true);
    }

    let mut order: Vec<&Needle> = needles.iter().collect();
    order.sort_by(|a, b| b.text.len().cmp(&a.text.len()).then(a.text.cmp(&b.text)));
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for needle in order {
        let pattern = match &folded {
            Some(_) => fold(&needle.text).unwrap_or_else(|| needle.text.clone()),
            None => needle.text.clone(),
        };
        for (start, m) in haystack.match_indices(pattern.as_str()) {
            let end = start + m.len();
            if taken[start..end].iter().any(|&t| t) {
                continue;
            }
            if needle.whole_word {
                let before = haystack[..start].chars().next_back();
                let after = haystack[end..].chars().next();
                if before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric) {
                    continue;
                }
            }
            taken[start..end].fill(true);
            spans.push((start, end));
        }
    }
    spans.sort();
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    for (start, end) in spans {
        out.push_str(&text[pos..start]);
        out.push_str(REDACTED);
        pos = end;
    }
    out.push_str(&text[pos..]);
    out
}

fn redact_value(v: &Value, needles: &[Needle]) -> Value {
    match v {
        Value::String(s) => Value::String(redact(s, needles)),
        Value::Array(items) => Value::Array(items.iter().map(|i| redact_value(i, needles)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), redact_value(v, needles)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn year_field(field: &str) -> String {
    match field.strip_suffix("_date") {
        Some(stem) => format!("{stem}_year"),
        None => format!("{field}_year"),
    }
}

fn parse_year(v: &Value) -> Option<i32> {
    let s = v.as_str()?;
    NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d")
        .ok()
        .map(|d| d.year())
}

/// Shifts an ISO date or an RFC 3339 timestamp by whole days.
pub fn shift_text_date(s: &str, days: i64) -> Option<String> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return shift_date(d, days).map(|d| d.format("%Y-%m-%d").to_string());
    }
    let ts = DateTime::parse_from_rfc3339(s).ok()?;
    let shifted = ts.checked_add_signed(chrono::Duration::days(days))?;
    Some(shifted.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true))
}

impl Deidentifier {
    fn text_marker(&self) -> String {
        self.key.fingerprint()
    }

    /// Needles for everything the vault knows about one identity.
    pub fn needles(&self, pseudonym: &Pseudonym) -> Vec<Needle> {
        let (name, phone) = self
            .vault
            .attributes(pseudonym)
            .map(|a| (a.full_name, a.phone))
            .unwrap_or_default();
        needles_for(&name, &phone, &self.vault.external_ids(pseudonym))
    }

    /// Applies the text rules to one harmonized record (a JSON object).
    pub fn deid_text(
        &self,
        source: SourceSystem,
        record: &Map<String, Value>,
    ) -> Result<Map<String, Value>, DeidError> {
        let marker = self.text_marker();
        let already = record.get(MARKER_FIELD).and_then(Value::as_str) == Some(marker.as_str());
        let pseudonym: Pseudonym = if already {
            let p = record
                .get(PSEUDONYM_FIELD)
                .and_then(Value::as_str)
                .ok_or_else(|| DeidError::DeidRefused("marked record without pseudonym".into()))?;
            if !self.vault.contains_pseudonym(p) {
                return Err(DeidError::DeidRefused(format!("unknown pseudonym {p}")));
            }
            p.parse()?
        } else {
            let id = record
                .get(IDENTITY_FIELD)
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| DeidError::DeidRefused(format!("{IDENTITY_FIELD} missing")))?;
            self.vault.pseudonymize(&self.key, source, id)?
        };

        let mut needles = self.needles(&pseudonym);
        let own = |f: &str| record.get(f).and_then(Value::as_str).unwrap_or("").to_string();
        let ids: Vec<String> = record
            .get(IDENTITY_FIELD)
            .and_then(Value::as_str)
            .map(|s| vec![s.trim().to_string()])
            .unwrap_or_default();
        for n in needles_for(&own("full_name"), &own("phone"), &ids) {
            if !needles.contains(&n) {
                needles.push(n);
            }
        }
        let offset = self.date_shift_offset(&pseudonym);
        let policy = &self.policy;
        let derived: Vec<String> = policy
            .text_rules
            .iter()
            .filter(|(_, a)| **a == TextAction::YearOnly)
            .map(|(f, _)| year_field(f))
            .collect();

        let mut out = Map::new();
        for (field, value) in record {
            if field == MARKER_FIELD || field == PSEUDONYM_FIELD {
                continue;
            }
            if already && derived.contains(field) {
                out.insert(field.clone(), value.clone());
                continue;
            }
            match policy.text_action(field) {
                TextAction::Drop => {}
                TextAction::Pseudonym => {}
                TextAction::Keep => {
                    out.insert(field.clone(), redact_value(value, &needles));
                }
                TextAction::YearOnly if already => {}
                TextAction::YearOnly => {
                    if let Some(y) = parse_year(value) {
                        out.insert(year_field(field), Value::from(y));
                    }
                }
                TextAction::DateShift if already => {
                    out.insert(field.clone(), value.clone());
                }
                TextAction::DateShift => {
                    if let Some(s) = value.as_str().and_then(|s| shift_text_date(s, offset)) {
                        out.insert(field.clone(), Value::String(s));
                    }
                }
            }
        }
        out.insert(PSEUDONYM_FIELD.into(), Value::String(pseudonym.to_string()));
        out.insert(MARKER_FIELD.into(), Value::String(marker));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(text: &str, whole_word: bool) -> Needle {
        Needle {
            text: text.into(),
            whole_word,
        }
    }

    #[test]
    fn redacts_case_insensitively_at_the_same_position() {
        let out = redact("Patient DOE reports cough", &[n("Doe", true)]);
        assert_eq!(out, "Patient [REDACTED] reports cough");
    }

    #[test]
    fn longest_needle_wins() {
        let out = redact("Doe, Jane called", &[n("Doe", true), n("Doe, Jane", false)]);
        assert_eq!(out, "[REDACTED] called");
    }

    #[test]
    fn whole_word_tokens_leave_other_words_alone() {
        let out = redact("Dr Li, clinical note", &[n("Li", true)]);
        assert_eq!(out, "Dr [REDACTED], clinical note");
    }

    #[test]
    fn redaction_is_idempotent_even_for_marker_like_needles() {
        let needles = [n("red", false), n("Doe", true)];
        let once = redact("Doe red", &needles);
        assert_eq!(once, "[REDACTED] [REDACTED]");
        assert_eq!(redact(&once, &needles), once);
    }

    #[test]
    fn name_token_needles() {
        let ns = needles_for("Doe, Jane", "+7 900 123-45-67", &["1007".into()]);
        let texts: Vec<&str> = ns.iter().map(|n| n.text.as_str()).collect();
        assert_eq!(texts, ["Doe, Jane", "Doe", "Jane", "+7 900 123-45-67", "79001234567", "1007"]);
    }

    #[test]
    fn text_dates_shift_by_days() {
        assert_eq!(shift_text_date("2023-01-10", 30).unwrap(), "2023-02-09");
        assert_eq!(
            shift_text_date("2024-05-01T10:00:00Z", -1).unwrap(),
            "2024-04-30T10:00:00Z"
        );
        assert_eq!(shift_text_date("not a date", 3), None);
    }
}
