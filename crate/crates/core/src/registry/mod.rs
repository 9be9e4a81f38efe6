//! The de-identified screening register.
//!
//! Every change is a [`JournalEntry`] appended to the journal topic at
//! `<data_root>/registry/journal` before it is applied; the in-memory state
//! is the fold of the journal. Upstream topics are consumed with a durable
//! cursor and de-duplicated by content hash, so re-delivery and full replay
//! are no-ops. Mutations are serialized through one writer; readers take
//! cheap snapshots.

mod model;
mod outliers;
mod state;
mod workflow;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, Utc};
use screenforge_queue::{QueueError, QueueLog, Topic, TopicOptions};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::deid::Pseudonym;
use crate::ingest::{TOPIC_EHR, TOPIC_IMAGING, TOPIC_PARTICIPANTS, TOPIC_RIS};

pub use model::*;
pub use outliers::{flag_outliers, median, THRESHOLD as OUTLIER_THRESHOLD};
pub use state::{input_hash, ClinicalNote, JournalEntry, Parked, RisNote, State};
pub use workflow::{
    apply_event, generate_narrative, map_category_to_outcome, transition, validate_protocol,
    NarrativeInput, OutcomeMap, MAX_DIAMETER_MM,
};

/// Consumer id used for cursors on the upstream topics.
pub const CONSUMER: &str = "registry";
/// Upstream topics in the order a consume pass reads them.
pub const TOPICS: [&str; 4] = [TOPIC_PARTICIPANTS, TOPIC_EHR, TOPIC_RIS, TOPIC_IMAGING];

pub const EXPORT_HEADER: [&str; 10] = [
    "pseudonym",
    "study_uid",
    "study_date",
    "lungrads_category",
    "outcome",
    "nodule_count",
    "max_nodule_diameter_mm",
    "reader_id",
    "second_opinion",
    "outlier_flag",
];

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{event} is not allowed in state {state}")]
    IllegalTransition { state: CaseState, event: String },
    #[error("category {category} requires at least one nodule")]
    CategoryNoduleMismatch { category: LungRads },
    #[error("{0}")]
    Invalid(String),
    #[error("study {0} has no final protocol")]
    NotFinalized(String),
    #[error("register journal entry {offset} cannot be applied: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("register journal is read-only after detected corruption")]
    ReadOnly,
    #[error(transparent)]
    Queue(#[from] QueueError),
}

impl RegistryError {
    /// Stable machine code for API clients.
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::NotFound(_) => "NOT_FOUND",
            RegistryError::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            RegistryError::CategoryNoduleMismatch { .. } => "CATEGORY_NODULE_MISMATCH",
            RegistryError::Invalid(_) => "VALIDATION_FAILED",
            RegistryError::NotFinalized(_) => "NOT_FINALIZED",
            RegistryError::Corrupt { .. } => "REGISTER_CORRUPT",
            RegistryError::ReadOnly => "REGISTER_READ_ONLY",
            RegistryError::Queue(_) => "STORAGE_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryConfig {
    pub follow_up_days: i64,
    pub ruleset_version: String,
    pub outcome_map: OutcomeMap,
    /// How long an input may wait for its participant before a warning.
    #[serde(with = "secs")]
    pub park_warning_after: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            follow_up_days: 365,
            ruleset_version: crate::ingest::EligibilityRules::default().ruleset_version,
            outcome_map: OutcomeMap::default(),
            park_warning_after: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportFilter {
    pub state: Option<CaseState>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub rows: Vec<DatasetRow>,
    pub csv: Vec<u8>,
    pub manifest: Manifest,
}

impl Export {
    pub fn manifest_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConsumeReport {
    pub read: usize,
    pub applied: usize,
    pub duplicates: usize,
    pub parked: usize,
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

struct Writer {
    journal: Topic,
}

pub struct Registry {
    dir: PathBuf,
    config: RegistryConfig,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<State>>,
    clock: Clock,
    parked_since: Mutex<HashMap<String, (Instant, bool)>>,
}

fn fold(journal: &Topic) -> Result<State, RegistryError> {
    let mut state = State::default();
    let mut from = 0;
    loop {
        let batch = journal.read(from, 1024)?;
        if batch.is_empty() {
            break;
        }
        for r in &batch {
            let entry: JournalEntry = serde_json::from_slice(&r.payload).map_err(|e| RegistryError::Corrupt {
                offset: r.offset,
                reason: e.to_string(),
            })?;
            state.apply(&entry).map_err(|e| RegistryError::Corrupt {
                offset: r.offset,
                reason: e.to_string(),
            })?;
        }
        from = batch.last().unwrap().offset + 1;
    }
    Ok(state)
}

impl Registry {
    pub fn open(data_root: &Path, config: RegistryConfig) -> Result<Self, RegistryError> {
        let dir = data_root.join("registry");
        let journal = Topic::open(dir.join("journal"), "journal", TopicOptions::default())?;
        if journal.is_read_only() {
            warn!("register journal opened read-only");
        }
        let state = fold(&journal)?;
        info!(
            cases = state.cases.len(),
            entries = journal.next_offset(),
            "register loaded"
        );
        Ok(Registry {
            dir,
            config,
            writer: Mutex::new(Writer { journal }),
            snapshot: RwLock::new(Arc::new(state)),
            clock: Box::new(Utc::now),
            parked_since: Mutex::new(HashMap::new()),
        })
    }

    /// Replaces the wall clock used to stamp commands.
    pub fn set_clock(&mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) {
        self.clock = Box::new(clock);
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> Arc<State> {
        self.snapshot.read().unwrap().clone()
    }

    /// Journals and applies one entry under the writer lock. The entry is
    /// applied to a copy first so a rejected command leaves no trace.
    fn commit(&self, entry: JournalEntry) -> Result<Option<ReadingProtocol>, RegistryError> {
        let w = self.writer.lock().unwrap();
        if w.journal.is_read_only() {
            return Err(RegistryError::ReadOnly);
        }
        let mut next = (*self.snapshot()).clone();
        let out = next.apply(&entry)?;
        let payload = serde_json::to_vec(&entry).expect("journal entries serialize");
        w.journal.append(entry.key().as_bytes(), &payload)?;
        *self.snapshot.write().unwrap() = Arc::new(next);
        Ok(out)
    }

    /// Reads every upstream topic from the committed cursor and applies new
    /// records. Safe to call repeatedly and concurrently with commands.
    pub fn consume(&self, queue: &QueueLog) -> Result<ConsumeReport, RegistryError> {
        let mut report = ConsumeReport::default();
        for topic in TOPICS {
            let mut from = queue.resume(CONSUMER, topic)?;
            loop {
                let batch = match queue.read(topic, from, 256) {
                    Ok(b) => b,
                    Err(QueueError::UnknownTopic(_)) => break,
                    Err(e) => return Err(e.into()),
                };
                if batch.is_empty() {
                    break;
                }
                for r in &batch {
                    report.read += 1;
                    let hash = state::input_hash(topic, &r.key, &r.payload);
                    if self.snapshot().seen.contains(&hash) {
                        report.duplicates += 1;
                        continue;
                    }
                    let Ok(payload) = String::from_utf8(r.payload.clone()) else {
                        warn!(topic, offset = r.offset, "non-UTF-8 payload skipped");
                        continue;
                    };
                    self.commit(JournalEntry::Input {
                        topic: topic.to_string(),
                        key: String::from_utf8_lossy(&r.key).into_owned(),
                        payload,
                    })?;
                    report.applied += 1;
                }
                let last = batch.last().unwrap().offset;
                queue.commit(CONSUMER, topic, last)?;
                from = last + 1;
            }
        }
        report.parked = self.snapshot().parked.len();
        self.warn_parked();
        Ok(report)
    }

    fn warn_parked(&self) {
        let snap = self.snapshot();
        let mut since = self.parked_since.lock().unwrap();
        let now = Instant::now();
        let live: Vec<String> = snap
            .parked
            .iter()
            .map(|p| state::input_hash(&p.topic, p.key.as_bytes(), p.payload.as_bytes()))
            .collect();
        since.retain(|h, _| live.contains(h));
        for (p, h) in snap.parked.iter().zip(live) {
            let (first, warned) = since.entry(h).or_insert((now, false));
            if !*warned && now.duration_since(*first) >= self.config.park_warning_after {
                warn!(topic = %p.topic, pseudonym = %p.pseudonym, "input still waiting for its participant");
                *warned = true;
            }
        }
    }

    pub fn submit_protocol(
        &self,
        study_uid: &str,
        reader_id: &str,
        nodules: Vec<Nodule>,
        category: LungRads,
        is_second_opinion: bool,
    ) -> Result<ReadingProtocol, RegistryError> {
        if reader_id.trim().is_empty() {
            return Err(RegistryError::Invalid("reader_id must not be empty".into()));
        }
        validate_protocol(category, &nodules)?;
        let entry = JournalEntry::SubmitProtocol {
            at: (self.clock)(),
            study_uid: study_uid.to_string(),
            reader_id: reader_id.to_string(),
            nodules,
            category,
            outcome: self.config.outcome_map.outcome(category),
            second_opinion: is_second_opinion,
        };
        Ok(self.commit(entry)?.expect("submit yields a protocol"))
    }

    pub fn request_second_opinion(&self, study_uid: &str, expert_id: &str) -> Result<ScreeningCase, RegistryError> {
        if expert_id.trim().is_empty() {
            return Err(RegistryError::Invalid("expert_id must not be empty".into()));
        }
        self.commit(JournalEntry::RequestSecondOpinion {
            at: (self.clock)(),
            study_uid: study_uid.to_string(),
            expert_id: expert_id.to_string(),
        })?;
        self.case_for_study(study_uid)
    }

    /// Routes the case per its final protocol's outcome.
    pub fn route_outcome(&self, study_uid: &str) -> Result<ScreeningCase, RegistryError> {
        let snap = self.snapshot();
        let read_date = snap
            .final_protocol(study_uid)
            .map(|p| p.created_at.date_naive());
        let next_invite_date = read_date.and_then(|d| {
            d.checked_add_signed(chrono::Duration::days(self.config.follow_up_days))
        });
        self.commit(JournalEntry::Finalize {
            at: (self.clock)(),
            study_uid: study_uid.to_string(),
            next_invite_date,
        })?;
        self.case_for_study(study_uid)
    }

    /// Finalizes every READ_DONE case whose final protocol is older than
    /// `after`. Returns the finalized study UIDs.
    pub fn finalize_due(&self, after: chrono::Duration) -> Result<Vec<String>, RegistryError> {
        let now = (self.clock)();
        let snap = self.snapshot();
        let due: Vec<String> = snap
            .cases
            .values()
            .filter(|c| c.state == CaseState::ReadDone)
            .filter_map(|c| c.current_study.clone())
            .filter(|s| snap.final_protocol(s).is_some_and(|p| now - p.created_at >= after))
            .collect();
        for s in &due {
            self.route_outcome(s)?;
        }
        Ok(due)
    }

    pub fn close_contact(&self, task_id: u64, note: &str) -> Result<ContactTask, RegistryError> {
        self.commit(JournalEntry::CloseContact {
            at: (self.clock)(),
            task_id,
            note: note.to_string(),
        })?;
        Ok(self.snapshot().tasks[task_id as usize - 1].clone())
    }

    pub fn reinvite(&self, pseudonym: &str) -> Result<ScreeningCase, RegistryError> {
        let p: Pseudonym = pseudonym
            .parse()
            .map_err(|_| RegistryError::NotFound(format!("participant {pseudonym}")))?;
        self.commit(JournalEntry::ReInvite {
            at: (self.clock)(),
            pseudonym: p,
        })?;
        self.case(pseudonym)
    }

    pub fn case(&self, pseudonym: &str) -> Result<ScreeningCase, RegistryError> {
        self.snapshot()
            .cases
            .get(pseudonym)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(format!("participant {pseudonym}")))
    }

    pub fn case_for_study(&self, study_uid: &str) -> Result<ScreeningCase, RegistryError> {
        let snap = self.snapshot();
        let study = snap
            .studies
            .get(study_uid)
            .ok_or_else(|| RegistryError::NotFound(format!("study {study_uid}")))?;
        Ok(snap.cases[study.pseudonym.as_str()].clone())
    }

    pub fn study(&self, study_uid: &str) -> Result<StudyRecord, RegistryError> {
        self.snapshot()
            .studies
            .get(study_uid)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(format!("study {study_uid}")))
    }

    pub fn protocols_for(&self, study_uid: &str) -> Vec<ReadingProtocol> {
        let snap = self.snapshot();
        snap.studies
            .get(study_uid)
            .map(|s| s.protocols.iter().filter_map(|id| snap.protocol(*id).cloned()).collect())
            .unwrap_or_default()
    }

    pub fn contact_tasks(&self) -> Vec<ContactTask> {
        self.snapshot().tasks.clone()
    }

    /// Cases waiting for a read or a second opinion, oldest first.
    pub fn worklist(&self) -> Vec<WorklistEntry> {
        let snap = self.snapshot();
        let mut out: Vec<WorklistEntry> = snap
            .cases
            .values()
            .filter(|c| matches!(c.state, CaseState::AwaitingRead | CaseState::SecondOpinionPending))
            .filter_map(|c| {
                let study_uid = c.current_study.clone()?;
                let second = c.state == CaseState::SecondOpinionPending;
                Some(WorklistEntry {
                    assigned_reader: second
                        .then(|| snap.studies.get(&study_uid).and_then(|s| s.assigned_expert.clone()))
                        .flatten(),
                    study_uid,
                    pseudonym: c.pseudonym.clone(),
                    state: c.state,
                    waiting_since: c.state_since(),
                    second_opinion: second,
                })
            })
            .collect();
        out.sort_by(|a, b| (a.waiting_since, &a.study_uid).cmp(&(b.waiting_since, &b.study_uid)));
        out
    }

    /// Chronological view of one participant. Source facts are placed at
    /// their (shifted) clinical dates, workflow actions at their wall-clock
    /// time; ties go registration, clinical, imaging, protocol, routing.
    pub fn timeline(&self, pseudonym: &str) -> Result<Vec<TimelineEntry>, RegistryError> {
        let snap = self.snapshot();
        let case = snap
            .cases
            .get(pseudonym)
            .ok_or_else(|| RegistryError::NotFound(format!("participant {pseudonym}")))?;
        let midnight = |d: NaiveDate| d.and_hms_opt(0, 0, 0).unwrap().and_utc();
        let mut out = Vec::new();
        for h in &case.history {
            let (kind, at, summary, detail) = match &h.event {
                CaseEvent::Registered => (
                    TimelineKind::Registration,
                    h.at,
                    "Registered for screening".to_string(),
                    serde_json::json!({"birth_year": case.birth_year, "sex": case.sex}),
                ),
                CaseEvent::EligibilityChecked { eligible } => {
                    let reasons = case.eligibility.as_ref().map(|e| e.reasons.clone()).unwrap_or_default();
                    let summary = if *eligible {
                        "Eligible for screening".to_string()
                    } else {
                        format!("Not eligible: {}", reasons.join(", "))
                    };
                    (
                        TimelineKind::Registration,
                        h.at,
                        summary,
                        serde_json::json!({"eligible": eligible, "reasons": reasons}),
                    )
                }
                CaseEvent::StudyLinked { study_uid } => {
                    let study = &snap.studies[study_uid];
                    (
                        TimelineKind::Imaging,
                        study.study_date.map_or(h.at, midnight),
                        format!("{} study received ({} images)", study.modality, study.instance_count),
                        serde_json::json!({"study_uid": study_uid}),
                    )
                }
                CaseEvent::ReadQueued { .. } => continue,
                CaseEvent::ProtocolSubmitted { protocol_id }
                | CaseEvent::SecondOpinionSubmitted { protocol_id } => {
                    let p = snap.protocol(*protocol_id).expect("protocol exists");
                    let who = if p.is_second_opinion { "second opinion" } else { "protocol" };
                    (
                        TimelineKind::Protocol,
                        p.created_at,
                        format!("Lung-RADS {} {who} by {}: {}", p.lungrads_category, p.reader_id, p.outcome.phrase()),
                        serde_json::json!({"protocol_id": p.protocol_id, "study_uid": p.study_uid}),
                    )
                }
                CaseEvent::SecondOpinionRequested { expert_id } => (
                    TimelineKind::Protocol,
                    h.at,
                    format!("Second medical review requested from {expert_id}"),
                    serde_json::json!({"expert_id": expert_id}),
                ),
                CaseEvent::Finalized {
                    outcome,
                    next_invite_date,
                    contact_task_id,
                } => (
                    TimelineKind::Routing,
                    h.at,
                    format!("Outcome: {}", outcome.phrase()),
                    serde_json::json!({
                        "outcome": outcome,
                        "next_invite_date": next_invite_date,
                        "contact_task_id": contact_task_id,
                    }),
                ),
                CaseEvent::ContactClosed { task_id } => (
                    TimelineKind::Routing,
                    h.at,
                    "Participant contacted".to_string(),
                    serde_json::json!({"task_id": task_id}),
                ),
                CaseEvent::ReInvited => (
                    TimelineKind::Routing,
                    h.at,
                    "Re-invited to screening".to_string(),
                    serde_json::Value::Null,
                ),
            };
            out.push(TimelineEntry { at, kind, summary, detail });
        }
        for c in snap.clinical.get(pseudonym).into_iter().flatten() {
            out.push(TimelineEntry {
                at: c.event_date.map_or(DateTime::UNIX_EPOCH, midnight),
                kind: TimelineKind::Clinical,
                summary: format!("{} {}: {}", c.kind.to_lowercase(), c.code, c.value),
                detail: serde_json::json!({"kind": c.kind, "code": c.code, "value": c.value}),
            });
        }
        for r in snap.reports.get(pseudonym).into_iter().flatten() {
            out.push(TimelineEntry {
                at: r.study_date.map_or(DateTime::UNIX_EPOCH, midnight),
                kind: TimelineKind::Imaging,
                summary: format!("{} report by {}", r.modality, r.radiologist_id),
                detail: serde_json::json!({"report_text": r.report_text}),
            });
        }
        out.sort_by(|a, b| (a.at, a.kind).cmp(&(b.at, b.kind)));
        Ok(out)
    }

    /// One row per finalized study, ordered by pseudonym then study UID.
    pub fn export(&self, filter: &ExportFilter) -> Export {
        let snap = self.snapshot();
        let mut rows: Vec<DatasetRow> = Vec::new();
        let mut manifest_rows = Vec::new();
        for study in snap.studies.values() {
            if study.finalized_at.is_none() {
                continue;
            }
            let case = &snap.cases[study.pseudonym.as_str()];
            if filter.state.is_some_and(|s| s != case.state)
                || filter.from.is_some_and(|f| study.study_date.is_none_or(|d| d < f))
                || filter.to.is_some_and(|t| study.study_date.is_none_or(|d| d > t))
            {
                continue;
            }
            let Some(p) = snap.final_protocol(&study.study_uid) else {
                continue;
            };
            rows.push(DatasetRow {
                pseudonym: study.pseudonym.to_string(),
                study_uid: study.study_uid.clone(),
                study_date: study.study_date,
                lungrads_category: p.lungrads_category,
                outcome: p.outcome,
                nodule_count: p.nodules.len(),
                max_nodule_diameter_mm: p.max_diameter(),
                reader_id: p.reader_id.clone(),
                second_opinion: p.is_second_opinion,
                outlier_flag: false,
            });
        }
        rows.sort_by(|a, b| (&a.pseudonym, &a.study_uid).cmp(&(&b.pseudonym, &b.study_uid)));
        let measured: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.max_nodule_diameter_mm.map(|d| (i, d)))
            .collect();
        let values: Vec<f64> = measured.iter().map(|(_, d)| *d).collect();
        for ((i, _), flag) in measured.iter().zip(flag_outliers(&values)) {
            rows[*i].outlier_flag = flag;
        }
        for r in &rows {
            manifest_rows.push(ManifestRow {
                study_uid: r.study_uid.clone(),
                instance_count: snap.studies[&r.study_uid].instance_count,
            });
        }
        let csv = write_csv(&rows);
        let manifest = Manifest {
            row_count: rows.len(),
            exported_at: (self.clock)(),
            ruleset_version: self.config.ruleset_version.clone(),
            follow_up_days: self.config.follow_up_days,
            rows: manifest_rows,
        };
        Export { rows, csv, manifest }
    }

    pub fn stats(&self) -> StatsSummary {
        let snap = self.snapshot();
        let mut by_state: BTreeMap<String, usize> =
            CaseState::ALL.iter().map(|s| (s.to_string(), 0)).collect();
        for c in snap.cases.values() {
            *by_state.get_mut(c.state.as_str()).unwrap() += 1;
        }
        let mut by_category: BTreeMap<String, usize> =
            LungRads::ALL.iter().map(|c| (c.to_string(), 0)).collect();
        let mut by_outcome: BTreeMap<String, usize> =
            Outcome::ALL.iter().map(|o| (o.to_string(), 0)).collect();
        let mut finalized = 0;
        let mut second = 0;
        let mut turnaround = Vec::new();
        for s in snap.studies.values().filter(|s| s.finalized_at.is_some()) {
            let Some(p) = snap.final_protocol(&s.study_uid) else { continue };
            finalized += 1;
            *by_category.get_mut(p.lungrads_category.as_str()).unwrap() += 1;
            *by_outcome.get_mut(p.outcome.as_str()).unwrap() += 1;
            if p.is_second_opinion {
                second += 1;
            }
            turnaround.push((p.created_at - s.ready_at).num_milliseconds() as f64 / 3_600_000.0);
        }
        StatsSummary {
            cases: snap.cases.len(),
            by_state,
            by_category,
            by_outcome,
            finalized_studies: finalized,
            second_opinion_rate: if finalized == 0 { 0.0 } else { second as f64 / finalized as f64 },
            mean_turnaround_hours: (!turnaround.is_empty())
                .then(|| turnaround.iter().sum::<f64>() / turnaround.len() as f64),
        }
    }

    /// Re-folds the journal from offset 0 and compares with the live state.
    pub fn replay_check(&self) -> Result<Result<(), String>, RegistryError> {
        let w = self.writer.lock().unwrap();
        let replayed = fold(&w.journal)?;
        let live = self.snapshot();
        if replayed == *live {
            Ok(Ok(()))
        } else {
            Ok(Err(format!(
                "replayed register differs from live state ({} vs {} cases, {} vs {} protocols)",
                replayed.cases.len(),
                live.cases.len(),
                replayed.protocols.len(),
                live.protocols.len()
            )))
        }
    }

    pub fn journal_len(&self) -> u64 {
        self.writer.lock().unwrap().journal.next_offset()
    }
}

fn write_csv(rows: &[DatasetRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EXPORT_HEADER).unwrap();
    for r in rows {
        w.write_record([
            r.pseudonym.clone(),
            r.study_uid.clone(),
            r.study_date.map(|d| d.to_string()).unwrap_or_default(),
            r.lungrads_category.to_string(),
            r.outcome.to_string(),
            r.nodule_count.to_string(),
            r.max_nodule_diameter_mm.map(|d| d.to_string()).unwrap_or_default(),
            r.reader_id.clone(),
            r.second_opinion.to_string(),
            r.outlier_flag.to_string(),
        ])
        .unwrap();
    }
    w.into_inner().unwrap()
}
