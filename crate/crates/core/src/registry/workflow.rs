use std::collections::BTreeMap;
use std::fmt::Write;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::model::*;
use super::RegistryError;
use crate::deid::Pseudonym;

/// Target state for `event` in `state`, or `None` when the pair is not in
/// the legal-transition table.
///
/// | from | event | to |
/// |---|---|---|
/// | REGISTERED | EligibilityChecked | ELIGIBLE / INELIGIBLE |
/// | ELIGIBLE, FOLLOW_UP_SCHEDULED | StudyLinked | IMAGED |
/// | IMAGED | ReadQueued | AWAITING_READ |
/// | AWAITING_READ | ProtocolSubmitted | READ_DONE |
/// | AWAITING_READ, READ_DONE | SecondOpinionRequested | SECOND_OPINION_PENDING |
/// | SECOND_OPINION_PENDING | SecondOpinionSubmitted | READ_DONE |
/// | READ_DONE | Finalized | CLOSED_HEALTHY / FOLLOW_UP_SCHEDULED / REFERRED |
/// | REFERRED | ContactClosed | REFERRED |
/// | INELIGIBLE, CLOSED_HEALTHY, FOLLOW_UP_SCHEDULED, REFERRED | ReInvited | REGISTERED |
///
/// `Registered` only creates a case and is never a transition.
pub fn transition(state: CaseState, event: &CaseEvent) -> Option<CaseState> {
    use CaseState::*;
    Some(match (state, event) {
        (Registered, CaseEvent::EligibilityChecked { eligible: true }) => Eligible,
        (Registered, CaseEvent::EligibilityChecked { eligible: false }) => Ineligible,
        (Eligible | FollowUpScheduled, CaseEvent::StudyLinked { .. }) => Imaged,
        (Imaged, CaseEvent::ReadQueued { .. }) => AwaitingRead,
        (AwaitingRead, CaseEvent::ProtocolSubmitted { .. }) => ReadDone,
        (AwaitingRead | ReadDone, CaseEvent::SecondOpinionRequested { .. }) => SecondOpinionPending,
        (SecondOpinionPending, CaseEvent::SecondOpinionSubmitted { .. }) => ReadDone,
        (ReadDone, CaseEvent::Finalized { outcome, .. }) => match outcome {
            Outcome::NoSigns => ClosedHealthy,
            Outcome::MedicalSupervision => FollowUpScheduled,
            Outcome::AdditionalExamination => Referred,
        },
        (Referred, CaseEvent::ContactClosed { .. }) => Referred,
        (Ineligible | ClosedHealthy | FollowUpScheduled | Referred, CaseEvent::ReInvited) => Registered,
        _ => return None,
    })
}

/// Applies one event, appending it to the history. On an illegal pair the
/// case is returned unchanged inside the error.
pub fn apply_event(
    case: &ScreeningCase,
    event: CaseEvent,
    at: DateTime<Utc>,
) -> Result<ScreeningCase, RegistryError> {
    let Some(next) = transition(case.state, &event) else {
        return Err(RegistryError::IllegalTransition {
            state: case.state,
            event: event.name().to_string(),
        });
    };
    let mut out = case.clone();
    match &event {
        CaseEvent::Finalized {
            next_invite_date,
            contact_task_id,
            ..
        } => {
            out.next_invite_date = if next == CaseState::FollowUpScheduled {
                Some(next_invite_date.ok_or_else(|| {
                    RegistryError::Invalid("follow-up finalization needs an invite date".into())
                })?)
            } else {
                None
            };
            out.contact_task_id = if next == CaseState::Referred {
                Some(contact_task_id.ok_or_else(|| {
                    RegistryError::Invalid("referral needs a contact task".into())
                })?)
            } else {
                None
            };
        }
        CaseEvent::StudyLinked { study_uid } => {
            if !out.linked_studies.contains(study_uid) {
                out.linked_studies.push(study_uid.clone());
            }
            out.held_studies.retain(|s| s != study_uid);
            out.current_study = Some(study_uid.clone());
        }
        _ => {}
    }
    if next != CaseState::FollowUpScheduled {
        out.next_invite_date = None;
    }
    if next != CaseState::Referred {
        out.contact_task_id = None;
    }
    out.state = next;
    out.history.push(HistoryEntry { event, at });
    Ok(out)
}

/// Lung-RADS category to programme outcome. The default groups 1 and 2 as
/// no signs, 0 and 3 as supervision with re-invitation, and all of 4 as
/// additional examination; a config file may override individual rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeMap(pub BTreeMap<LungRads, Outcome>);

impl Default for OutcomeMap {
    fn default() -> Self {
        OutcomeMap(
            LungRads::ALL
                .into_iter()
                .map(|c| (c, default_outcome(c)))
                .collect(),
        )
    }
}

fn default_outcome(category: LungRads) -> Outcome {
    match category {
        LungRads::C1 | LungRads::C2 => Outcome::NoSigns,
        LungRads::C0 | LungRads::C3 => Outcome::MedicalSupervision,
        LungRads::C4A | LungRads::C4B | LungRads::C4X => Outcome::AdditionalExamination,
    }
}

impl OutcomeMap {
    pub fn outcome(&self, category: LungRads) -> Outcome {
        self.0.get(&category).copied().unwrap_or_else(|| default_outcome(category))
    }
}

/// Default mapping.
pub fn map_category_to_outcome(category: LungRads) -> Outcome {
    default_outcome(category)
}

pub const MAX_DIAMETER_MM: f64 = 500.0;

/// Form checks shared by the API and the UI.
pub fn validate_protocol(category: LungRads, nodules: &[Nodule]) -> Result<(), RegistryError> {
    for (i, n) in nodules.iter().enumerate() {
        let d = n.mean_diameter_mm;
        if !(d.is_finite() && d > 0.0 && d < MAX_DIAMETER_MM) {
            return Err(RegistryError::Invalid(format!(
                "nodule {}: mean diameter must be greater than 0 and less than {MAX_DIAMETER_MM} mm",
                i + 1
            )));
        }
    }
    if category.requires_nodules() && nodules.is_empty() {
        return Err(RegistryError::CategoryNoduleMismatch { category });
    }
    Ok(())
}

pub struct NarrativeInput<'a> {
    pub pseudonym: &'a Pseudonym,
    pub study_uid: &'a str,
    pub study_date: Option<NaiveDate>,
    pub reader_id: &'a str,
    pub is_second_opinion: bool,
    pub nodules: &'a [Nodule],
    pub category: LungRads,
    pub outcome: Outcome,
}

/// Fixed-form protocol text. Same input, same bytes.
pub fn generate_narrative(p: &NarrativeInput<'_>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "LOW-DOSE CT LUNG SCREENING PROTOCOL");
    let _ = writeln!(s, "Participant: {}", p.pseudonym);
    let _ = writeln!(s, "Study: {}", p.study_uid);
    let _ = writeln!(
        s,
        "Study date: {}",
        p.study_date.map_or_else(|| "unknown".to_string(), |d| d.to_string())
    );
    let role = if p.is_second_opinion { " (second opinion)" } else { "" };
    let _ = writeln!(s, "Reader: {}{role}", p.reader_id);
    let _ = writeln!(s, "Findings:");
    if p.nodules.is_empty() {
        let _ = writeln!(s, "No nodules identified.");
    }
    for n in p.nodules {
        let _ = writeln!(
            s,
            "{:?}: {}, mean diameter {} mm",
            n.lobe,
            n.composition.label(),
            n.mean_diameter_mm
        );
    }
    let _ = writeln!(s, "Lung-RADS category: {}", p.category);
    let _ = writeln!(s, "Outcome: {}", p.outcome.phrase());
    s
}
