//! Transition table written out as plain tuples, independent of the
//! registry's `match`. Event names with an outcome suffix stand for
//! `Finalized` carrying that outcome; `EligibilityChecked` is split by flag.

use chrono::{DateTime, NaiveDate, Utc};
use screenforge_core::deid::Pseudonym;
use screenforge_core::registry::{apply_event, CaseEvent, CaseState, Outcome, ScreeningCase};

pub const TABLE: &[(&str, &str, &str)] = &[
    ("REGISTERED", "EligibilityChecked:true", "ELIGIBLE"),
    ("REGISTERED", "EligibilityChecked:false", "INELIGIBLE"),
    ("ELIGIBLE", "StudyLinked", "IMAGED"),
    ("FOLLOW_UP_SCHEDULED", "StudyLinked", "IMAGED"),
    ("IMAGED", "ReadQueued", "AWAITING_READ"),
    ("AWAITING_READ", "ProtocolSubmitted", "READ_DONE"),
    ("AWAITING_READ", "SecondOpinionRequested", "SECOND_OPINION_PENDING"),
    ("READ_DONE", "SecondOpinionRequested", "SECOND_OPINION_PENDING"),
    ("SECOND_OPINION_PENDING", "SecondOpinionSubmitted", "READ_DONE"),
    ("READ_DONE", "Finalized:NO_SIGNS", "CLOSED_HEALTHY"),
    ("READ_DONE", "Finalized:MEDICAL_SUPERVISION", "FOLLOW_UP_SCHEDULED"),
    ("READ_DONE", "Finalized:ADDITIONAL_EXAMINATION", "REFERRED"),
    ("REFERRED", "ContactClosed", "REFERRED"),
    ("INELIGIBLE", "ReInvited", "REGISTERED"),
    ("CLOSED_HEALTHY", "ReInvited", "REGISTERED"),
    ("FOLLOW_UP_SCHEDULED", "ReInvited", "REGISTERED"),
    ("REFERRED", "ReInvited", "REGISTERED"),
];

pub fn oracle(state: &str, event: &str) -> Option<&'static str> {
    TABLE
        .iter()
        .find(|(s, e, _)| *s == state && *e == event)
        .map(|(_, _, to)| *to)
}

/// Every event shape the generator draws from, by index.
pub const EVENT_KINDS: usize = 13;

pub fn event(i: usize) -> (String, CaseEvent) {
    let fin = |o: Outcome| {
        let event = CaseEvent::Finalized {
            outcome: o,
            next_invite_date: (o == Outcome::MedicalSupervision).then(|| NaiveDate::from_ymd_opt(2025, 1, 1).unwrap()),
            contact_task_id: (o == Outcome::AdditionalExamination).then_some(1),
        };
        (format!("Finalized:{}", o.as_str()), event)
    };
    match i {
        0 => ("Registered".into(), CaseEvent::Registered),
        1 => ("EligibilityChecked:true".into(), CaseEvent::EligibilityChecked { eligible: true }),
        2 => ("EligibilityChecked:false".into(), CaseEvent::EligibilityChecked { eligible: false }),
        3 => ("StudyLinked".into(), CaseEvent::StudyLinked { study_uid: "2.25.1".into() }),
        4 => ("ReadQueued".into(), CaseEvent::ReadQueued { study_uid: "2.25.1".into() }),
        5 => ("ProtocolSubmitted".into(), CaseEvent::ProtocolSubmitted { protocol_id: 1 }),
        6 => ("SecondOpinionRequested".into(), CaseEvent::SecondOpinionRequested { expert_id: "E".into() }),
        7 => ("SecondOpinionSubmitted".into(), CaseEvent::SecondOpinionSubmitted { protocol_id: 2 }),
        8 => fin(Outcome::NoSigns),
        9 => fin(Outcome::MedicalSupervision),
        10 => fin(Outcome::AdditionalExamination),
        11 => ("ContactClosed".into(), CaseEvent::ContactClosed { task_id: 1 }),
        _ => ("ReInvited".into(), CaseEvent::ReInvited),
    }
}

/// Drives one case through `events` and compares every step with the
/// table. Returns the number of accepted events, or a description of the
/// first disagreement.
pub fn check_sequence(start: usize, events: &[usize]) -> Result<usize, String> {
    let pseudonym: Pseudonym = "P00000000000000aa".parse().unwrap();
    let mut case = ScreeningCase::new(pseudonym);
    case.state = CaseState::ALL[start];
    let at: DateTime<Utc> = "2024-01-01T00:00:00Z".parse().unwrap();
    let mut accepted = 0;
    for &i in events {
        let (name, ev) = event(i);
        let expected = oracle(case.state.as_str(), &name);
        match (apply_event(&case, ev, at), expected) {
            (Ok(next), Some(to)) if next.state.as_str() == to => {
                accepted += 1;
                if next.history.len() != accepted {
                    return Err(format!("history length {} after {accepted} accepted", next.history.len()));
                }
                case = next;
            }
            (Err(_), None) => {}
            (got, want) => {
                return Err(format!(
                    "{} --{name}--> got {:?}, table says {want:?}",
                    case.state.as_str(),
                    got.map(|c| c.state.as_str())
                ))
            }
        }
    }
    Ok(accepted)
}
