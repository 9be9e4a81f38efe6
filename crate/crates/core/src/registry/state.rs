use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use super::model::*;
use super::workflow::{apply_event, generate_narrative, transition, validate_protocol, NarrativeInput};
use super::RegistryError;
use crate::deid::Pseudonym;
use crate::ingest::{TOPIC_EHR, TOPIC_IMAGING, TOPIC_PARTICIPANTS, TOPIC_RIS};
use crate::pacs::ImagingEvent;

/// One durable register change. Commands carry every value derived from
/// configuration at the time they were accepted, so replay does not depend
/// on the current config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    Input {
        topic: String,
        key: String,
        payload: String,
    },
    SubmitProtocol {
        at: DateTime<Utc>,
        study_uid: String,
        reader_id: String,
        nodules: Vec<Nodule>,
        category: LungRads,
        outcome: Outcome,
        second_opinion: bool,
    },
    RequestSecondOpinion {
        at: DateTime<Utc>,
        study_uid: String,
        expert_id: String,
    },
    Finalize {
        at: DateTime<Utc>,
        study_uid: String,
        next_invite_date: Option<NaiveDate>,
    },
    CloseContact {
        at: DateTime<Utc>,
        task_id: u64,
        note: String,
    },
    ReInvite {
        at: DateTime<Utc>,
        pseudonym: Pseudonym,
    },
}

impl JournalEntry {
    pub fn key(&self) -> String {
        match self {
            JournalEntry::Input { key, .. } => key.clone(),
            JournalEntry::SubmitProtocol { study_uid, .. }
            | JournalEntry::RequestSecondOpinion { study_uid, .. }
            | JournalEntry::Finalize { study_uid, .. } => study_uid.clone(),
            JournalEntry::CloseContact { task_id, .. } => task_id.to_string(),
            JournalEntry::ReInvite { pseudonym, .. } => pseudonym.to_string(),
        }
    }
}

/// Dedupe key of one upstream record.
pub fn input_hash(topic: &str, key: &[u8], payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(topic.as_bytes());
    h.update([0]);
    h.update(key);
    h.update([0]);
    h.update(payload);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub event_date: Option<NaiveDate>,
    pub kind: String,
    pub code: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisNote {
    pub study_date: Option<NaiveDate>,
    pub modality: String,
    pub report_text: String,
    pub radiologist_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parked {
    pub topic: String,
    pub key: String,
    pub payload: String,
    pub pseudonym: String,
}

#[derive(Debug, Deserialize)]
struct ParticipantMsg {
    pseudonym: Pseudonym,
    #[serde(default)]
    birth_year: Option<i32>,
    #[serde(default)]
    sex: Option<String>,
    #[serde(default)]
    registered_at: Option<DateTime<Utc>>,
    eligibility: EligibilitySummary,
}

#[derive(Debug, Deserialize)]
struct RisMsg {
    pseudonym: Pseudonym,
    #[serde(default)]
    study_date: Option<NaiveDate>,
    #[serde(default)]
    modality: String,
    #[serde(default)]
    report_text: String,
    #[serde(default)]
    radiologist_id: String,
}

#[derive(Debug, Deserialize)]
struct EhrMsg {
    pseudonym: Pseudonym,
    #[serde(default)]
    event_date: Option<NaiveDate>,
    #[serde(default)]
    kind: String,
    #[serde(default)]
    code: String,
    #[serde(default)]
    value: String,
}

/// The whole register, rebuilt by folding the journal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub cases: BTreeMap<String, ScreeningCase>,
    pub studies: BTreeMap<String, StudyRecord>,
    pub protocols: Vec<ReadingProtocol>,
    pub tasks: Vec<ContactTask>,
    pub clinical: BTreeMap<String, Vec<ClinicalNote>>,
    pub reports: BTreeMap<String, Vec<RisNote>>,
    pub parked: Vec<Parked>,
    /// Inputs that could not be decoded, by hash.
    pub rejected: BTreeSet<String>,
    /// Hashes of every consumed input.
    pub seen: BTreeSet<String>,
}

impl State {
    pub fn protocol(&self, id: u64) -> Option<&ReadingProtocol> {
        id.checked_sub(1).and_then(|i| self.protocols.get(i as usize))
    }

    pub fn final_protocol(&self, study_uid: &str) -> Option<&ReadingProtocol> {
        let study = self.studies.get(study_uid)?;
        study
            .protocols
            .iter()
            .filter_map(|id| self.protocol(*id))
            .find(|p| p.is_final)
    }

    /// Applies an entry. Returns the protocol created by a submit. On error
    /// the state is unchanged.
    pub fn apply(&mut self, entry: &JournalEntry) -> Result<Option<ReadingProtocol>, RegistryError> {
        match entry {
            JournalEntry::Input { topic, key, payload } => {
                let hash = input_hash(topic, key.as_bytes(), payload.as_bytes());
                if self.seen.insert(hash.clone()) {
                    self.apply_input(topic, key, payload, &hash);
                }
                Ok(None)
            }
            JournalEntry::SubmitProtocol {
                at,
                study_uid,
                reader_id,
                nodules,
                category,
                outcome,
                second_opinion,
            } => self
                .submit(*at, study_uid, reader_id, nodules, *category, *outcome, *second_opinion)
                .map(Some),
            JournalEntry::RequestSecondOpinion { at, study_uid, expert_id } => {
                let (pseudonym, case) = self.current_case(study_uid, "SecondOpinionRequested")?;
                let case = apply_event(
                    &case,
                    CaseEvent::SecondOpinionRequested {
                        expert_id: expert_id.clone(),
                    },
                    *at,
                )?;
                self.cases.insert(pseudonym, case);
                let study = self.studies.get_mut(study_uid).unwrap();
                study.assigned_expert = Some(expert_id.clone());
                for id in study.protocols.clone() {
                    self.protocols[id as usize - 1].is_final = false;
                }
                Ok(None)
            }
            JournalEntry::Finalize {
                at,
                study_uid,
                next_invite_date,
            } => {
                let (pseudonym, case) = self.current_case(study_uid, "Finalized")?;
                if case.state != CaseState::ReadDone {
                    return Err(RegistryError::IllegalTransition {
                        state: case.state,
                        event: "Finalized".into(),
                    });
                }
                let outcome = self
                    .final_protocol(study_uid)
                    .ok_or_else(|| RegistryError::NotFinalized(study_uid.clone()))?
                    .outcome;
                let task_id = (outcome == Outcome::AdditionalExamination)
                    .then_some(self.tasks.len() as u64 + 1);
                let case = apply_event(
                    &case,
                    CaseEvent::Finalized {
                        outcome,
                        next_invite_date: *next_invite_date,
                        contact_task_id: task_id,
                    },
                    *at,
                )?;
                if let Some(task_id) = task_id {
                    self.tasks.push(ContactTask {
                        task_id,
                        pseudonym: case.pseudonym.clone(),
                        study_uid: study_uid.clone(),
                        created_at: *at,
                        status: TaskStatus::Open,
                        note: String::new(),
                    });
                }
                self.studies.get_mut(study_uid).unwrap().finalized_at = Some(*at);
                self.cases.insert(pseudonym.clone(), case);
                self.link_held(&pseudonym);
                Ok(None)
            }
            JournalEntry::CloseContact { at, task_id, note } => {
                let task = task_id
                    .checked_sub(1)
                    .and_then(|i| self.tasks.get(i as usize))
                    .ok_or_else(|| RegistryError::NotFound(format!("contact task {task_id}")))?;
                let pseudonym = task.pseudonym.to_string();
                let case = self.cases.get(&pseudonym).expect("task belongs to a case");
                if case.contact_task_id != Some(*task_id) {
                    return Err(RegistryError::IllegalTransition {
                        state: case.state,
                        event: "ContactClosed".into(),
                    });
                }
                let case = apply_event(case, CaseEvent::ContactClosed { task_id: *task_id }, *at)?;
                self.cases.insert(pseudonym, case);
                let task = &mut self.tasks[*task_id as usize - 1];
                task.status = TaskStatus::Done;
                task.note = note.clone();
                Ok(None)
            }
            JournalEntry::ReInvite { at, pseudonym } => {
                let case = self
                    .cases
                    .get(pseudonym.as_str())
                    .ok_or_else(|| RegistryError::NotFound(format!("participant {pseudonym}")))?;
                let case = apply_event(case, CaseEvent::ReInvited, *at)?;
                self.cases.insert(pseudonym.to_string(), case);
                Ok(None)
            }
        }
    }

    fn current_case(&self, study_uid: &str, event: &str) -> Result<(String, ScreeningCase), RegistryError> {
        let study = self
            .studies
            .get(study_uid)
            .ok_or_else(|| RegistryError::NotFound(format!("study {study_uid}")))?;
        let case = self
            .cases
            .get(study.pseudonym.as_str())
            .ok_or_else(|| RegistryError::NotFound(format!("study {study_uid}")))?;
        if case.current_study.as_deref() != Some(study_uid) {
            return Err(RegistryError::IllegalTransition {
                state: case.state,
                event: event.into(),
            });
        }
        Ok((study.pseudonym.to_string(), case.clone()))
    }

    #[allow(clippy::too_many_arguments)]
    fn submit(
        &mut self,
        at: DateTime<Utc>,
        study_uid: &str,
        reader_id: &str,
        nodules: &[Nodule],
        category: LungRads,
        outcome: Outcome,
        second_opinion: bool,
    ) -> Result<ReadingProtocol, RegistryError> {
        let protocol_id = self.protocols.len() as u64 + 1;
        let event = if second_opinion {
            CaseEvent::SecondOpinionSubmitted { protocol_id }
        } else {
            CaseEvent::ProtocolSubmitted { protocol_id }
        };
        let (pseudonym, case) = self.current_case(study_uid, event.name())?;
        if transition(case.state, &event).is_none() {
            return Err(RegistryError::IllegalTransition {
                state: case.state,
                event: event.name().into(),
            });
        }
        validate_protocol(category, nodules)?;
        let case = apply_event(&case, event, at)?;
        let study = self.studies.get_mut(study_uid).unwrap();
        let narrative = generate_narrative(&NarrativeInput {
            pseudonym: &case.pseudonym,
            study_uid,
            study_date: study.study_date,
            reader_id,
            is_second_opinion: second_opinion,
            nodules,
            category,
            outcome,
        });
        let protocol = ReadingProtocol {
            protocol_id,
            study_uid: study_uid.to_string(),
            pseudonym: case.pseudonym.clone(),
            reader_id: reader_id.to_string(),
            nodules: nodules.to_vec(),
            lungrads_category: category,
            outcome,
            narrative,
            is_second_opinion: second_opinion,
            is_final: true,
            created_at: at,
        };
        for id in &study.protocols {
            self.protocols[*id as usize - 1].is_final = false;
        }
        study.protocols.push(protocol_id);
        self.protocols.push(protocol.clone());
        self.cases.insert(pseudonym, case);
        Ok(protocol)
    }

    fn apply_input(&mut self, topic: &str, key: &str, payload: &str, hash: &str) {
        let pseudonym = serde_json::from_str::<serde_json::Value>(payload)
            .ok()
            .and_then(|v| v.get("pseudonym")?.as_str().map(str::to_string));
        let Some(pseudonym) = pseudonym else {
            warn!(topic, "input without pseudonym rejected");
            self.rejected.insert(hash.to_string());
            return;
        };
        if topic != TOPIC_PARTICIPANTS && !self.cases.contains_key(&pseudonym) {
            self.parked.push(Parked {
                topic: topic.into(),
                key: key.into(),
                payload: payload.into(),
                pseudonym,
            });
            return;
        }
        let ok = match topic {
            TOPIC_PARTICIPANTS => self.on_participant(payload),
            TOPIC_IMAGING => self.on_imaging(payload),
            TOPIC_RIS => self.on_ris(payload),
            TOPIC_EHR => self.on_ehr(payload),
            _ => false,
        };
        if !ok {
            warn!(topic, "undecodable input rejected");
            self.rejected.insert(hash.to_string());
        }
    }

    fn on_participant(&mut self, payload: &str) -> bool {
        let Ok(msg) = serde_json::from_str::<ParticipantMsg>(payload) else {
            return false;
        };
        let key = msg.pseudonym.to_string();
        let at = msg.registered_at.unwrap_or(DateTime::UNIX_EPOCH);
        let existing = self.cases.get(&key).cloned();
        let mut case = match existing {
            None => {
                let mut c = ScreeningCase::new(msg.pseudonym.clone());
                c.history.push(HistoryEntry {
                    event: CaseEvent::Registered,
                    at,
                });
                c
            }
            Some(c) if c.state == CaseState::Registered => c,
            Some(c) => match apply_event(&c, CaseEvent::ReInvited, at) {
                Ok(c) => c,
                Err(_) => {
                    warn!(pseudonym = %key, state = %c.state, "re-registration ignored while case is active");
                    return true;
                }
            },
        };
        case.birth_year = msg.birth_year;
        case.sex = msg.sex.unwrap_or_default();
        case.registered_at = msg.registered_at;
        let eligible = msg.eligibility.eligible;
        case.eligibility = Some(msg.eligibility);
        case = apply_event(&case, CaseEvent::EligibilityChecked { eligible }, at)
            .expect("a registered case accepts an eligibility check");
        self.cases.insert(key.clone(), case);

        let (retry, keep): (Vec<Parked>, Vec<Parked>) =
            std::mem::take(&mut self.parked).into_iter().partition(|p| p.pseudonym == key);
        self.parked = keep;
        for p in retry {
            let hash = input_hash(&p.topic, p.key.as_bytes(), p.payload.as_bytes());
            self.apply_input(&p.topic, &p.key, &p.payload, &hash);
        }
        self.link_held(&key);
        true
    }

    fn on_imaging(&mut self, payload: &str) -> bool {
        let Ok(ev) = serde_json::from_str::<ImagingEvent>(payload) else {
            return false;
        };
        let key = ev.pseudonym.to_string();
        match self.studies.get_mut(&ev.study_uid) {
            Some(s) => s.instance_count = ev.instance_count,
            None => {
                self.studies.insert(
                    ev.study_uid.clone(),
                    StudyRecord {
                        study_uid: ev.study_uid.clone(),
                        pseudonym: ev.pseudonym.clone(),
                        modality: ev.modality.clone(),
                        study_date: ev.study_date,
                        instance_count: ev.instance_count,
                        ready_at: ev.emitted_at,
                        protocols: Vec::new(),
                        finalized_at: None,
                        assigned_expert: None,
                    },
                );
            }
        }
        let case = self.cases.get_mut(&key).expect("checked by caller");
        if case.linked_studies.contains(&ev.study_uid) || case.held_studies.contains(&ev.study_uid) {
            return true;
        }
        // Held studies queue oldest first by study date.
        let date_of = |uid: &String| (self.studies[uid].study_date.is_none(), self.studies[uid].study_date, uid.clone());
        let new_key = date_of(&ev.study_uid);
        let case = self.cases.get_mut(&key).expect("checked by caller");
        let pos = case.held_studies.partition_point(|h| date_of(h) <= new_key);
        case.held_studies.insert(pos, ev.study_uid);
        self.link_held(&key);
        true
    }

    fn on_ris(&mut self, payload: &str) -> bool {
        let Ok(m) = serde_json::from_str::<RisMsg>(payload) else {
            return false;
        };
        self.reports.entry(m.pseudonym.to_string()).or_default().push(RisNote {
            study_date: m.study_date,
            modality: m.modality,
            report_text: m.report_text,
            radiologist_id: m.radiologist_id,
        });
        true
    }

    fn on_ehr(&mut self, payload: &str) -> bool {
        let Ok(m) = serde_json::from_str::<EhrMsg>(payload) else {
            return false;
        };
        self.clinical.entry(m.pseudonym.to_string()).or_default().push(ClinicalNote {
            event_date: m.event_date,
            kind: m.kind,
            code: m.code,
            value: m.value,
        });
        true
    }

    /// Links the oldest held study while the case can take one.
    fn link_held(&mut self, pseudonym: &str) {
        loop {
            let Some(case) = self.cases.get(pseudonym) else { return };
            let Some(study_uid) = case.held_studies.first().cloned() else { return };
            let linked = CaseEvent::StudyLinked {
                study_uid: study_uid.clone(),
            };
            if transition(case.state, &linked).is_none() {
                return;
            }
            let at = self.studies[&study_uid].ready_at;
            let case = apply_event(case, linked, at)
                .and_then(|c| apply_event(&c, CaseEvent::ReadQueued { study_uid }, at))
                .expect("legal by the check above");
            self.cases.insert(pseudonym.to_string(), case);
        }
    }
}
