use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use screenforge_dicom::{tags, Tag};

use super::DeidError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Remove,
    ReplacePseudonym,
    Blank,
    Keep,
    DateShift,
    UidRemap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextAction {
    Drop,
    Pseudonym,
    YearOnly,
    Keep,
    DateShift,
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "REMOVE" => Action::Remove,
            "REPLACE_PSEUDONYM" => Action::ReplacePseudonym,
            "BLANK" => Action::Blank,
            "KEEP" => Action::Keep,
            "DATE_SHIFT" => Action::DateShift,
            "UID_REMAP" => Action::UidRemap,
            other => return Err(format!("unknown DICOM action {other:?}")),
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Remove => "REMOVE",
            Action::ReplacePseudonym => "REPLACE_PSEUDONYM",
            Action::Blank => "BLANK",
            Action::Keep => "KEEP",
            Action::DateShift => "DATE_SHIFT",
            Action::UidRemap => "UID_REMAP",
        })
    }
}

impl FromStr for TextAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "DROP" => TextAction::Drop,
            "PSEUDONYM" => TextAction::Pseudonym,
            "YEAR_ONLY" => TextAction::YearOnly,
            "KEEP" => TextAction::Keep,
            "DATE_SHIFT" => TextAction::DateShift,
            other => return Err(format!("unknown text action {other:?}")),
        })
    }
}

/// Tag rules for DICOM plus field rules for harmonized text records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeidPolicy {
    pub rules: BTreeMap<Tag, Action>,
    pub remove_private_tags: bool,
    pub text_rules: BTreeMap<String, TextAction>,
}

pub const DEFAULT_POLICY: &str = include_str!("../../policy/default.policy");

const REQUIRED: [(Tag, Action); 6] = [
    (tags::PATIENT_NAME, Action::ReplacePseudonym),
    (tags::PATIENT_ID, Action::ReplacePseudonym),
    (tags::STUDY_INSTANCE_UID, Action::UidRemap),
    (tags::SERIES_INSTANCE_UID, Action::UidRemap),
    (tags::SOP_INSTANCE_UID, Action::UidRemap),
    (tags::FRAME_OF_REFERENCE_UID, Action::UidRemap),
];

impl DeidPolicy {
    pub fn default_policy() -> Self {
        Self::parse(DEFAULT_POLICY).expect("shipped policy is valid")
    }

    /// Parses the line-oriented policy format:
    ///
    /// ```text
    /// remove_private_tags = true
    /// dicom (0010,0010) = REPLACE_PSEUDONYM
    /// text birth_date = YEAR_ONLY
    /// ```
    ///
    /// `#` starts a comment. Later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self, DeidError> {
        let mut policy = DeidPolicy {
            rules: BTreeMap::new(),
            remove_private_tags: false,
            text_rules: BTreeMap::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| DeidError::InvalidPolicy {
                line: i + 1,
                reason,
            };
            let (lhs, rhs) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (lhs, rhs) = (lhs.trim(), rhs.trim());
            if lhs == "remove_private_tags" {
                policy.remove_private_tags = match rhs {
                    "true" => true,
                    "false" => false,
                    other => return Err(err(format!("expected true or false, got {other:?}"))),
                };
            } else if let Some(tag) = lhs.strip_prefix("dicom ") {
                let tag: Tag = tag.trim().parse().map_err(|e| err(format!("{e}")))?;
                policy.rules.insert(tag, rhs.parse().map_err(err)?);
            } else if let Some(field) = lhs.strip_prefix("text ") {
                policy
                    .text_rules
                    .insert(field.trim().to_string(), rhs.parse().map_err(err)?);
            } else {
                return Err(err(format!("unknown key {lhs:?}")));
            }
        }
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), DeidError> {
        for (tag, want) in REQUIRED {
            let got = self.rules.get(&tag).copied();
            if got != Some(want) {
                return Err(DeidError::InvalidPolicy {
                    line: 0,
                    reason: format!("{tag} must be {want}, found {got:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn action(&self, tag: Tag) -> Action {
        self.rules.get(&tag).copied().unwrap_or(Action::Keep)
    }

    /// Fields without a rule are dropped.
    pub fn text_action(&self, field: &str) -> TextAction {
        self.text_rules
            .get(field)
            .copied()
            .unwrap_or(TextAction::Drop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_parses_and_covers_identity_tags() {
        let p = DeidPolicy::default_policy();
        assert!(p.remove_private_tags);
        assert_eq!(p.action(tags::PATIENT_NAME), Action::ReplacePseudonym);
        assert_eq!(p.action(tags::PATIENT_BIRTH_DATE), Action::Blank);
        assert_eq!(p.action(tags::PATIENT_TELEPHONE_NUMBERS), Action::Remove);
        assert_eq!(p.action(tags::STUDY_DATE), Action::DateShift);
        assert_eq!(p.action(tags::MODALITY), Action::Keep);
        assert_eq!(p.text_action("birth_date"), TextAction::YearOnly);
        assert_eq!(p.text_action("unlisted_field"), TextAction::Drop);
    }

    #[test]
    fn weakening_a_required_rule_is_rejected() {
        let text = DEFAULT_POLICY.to_string() + "\ndicom (0010,0010) = KEEP\n";
        assert!(matches!(
            DeidPolicy::parse(&text),
            Err(DeidError::InvalidPolicy { .. })
        ));
    }

    #[test]
    fn syntax_errors_name_the_line() {
        match DeidPolicy::parse("remove_private_tags = true\nbogus") {
            Err(DeidError::InvalidPolicy { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
