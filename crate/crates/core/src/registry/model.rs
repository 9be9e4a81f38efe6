use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::deid::Pseudonym;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseState {
    Registered,
    Ineligible,
    Eligible,
    Imaged,
    AwaitingRead,
    SecondOpinionPending,
    ReadDone,
    ClosedHealthy,
    FollowUpScheduled,
    Referred,
}

impl CaseState {
    pub const ALL: [CaseState; 10] = [
        CaseState::Registered,
        CaseState::Ineligible,
        CaseState::Eligible,
        CaseState::Imaged,
        CaseState::AwaitingRead,
        CaseState::SecondOpinionPending,
        CaseState::ReadDone,
        CaseState::ClosedHealthy,
        CaseState::FollowUpScheduled,
        CaseState::Referred,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseState::Registered => "REGISTERED",
            CaseState::Ineligible => "INELIGIBLE",
            CaseState::Eligible => "ELIGIBLE",
            CaseState::Imaged => "IMAGED",
            CaseState::AwaitingRead => "AWAITING_READ",
            CaseState::SecondOpinionPending => "SECOND_OPINION_PENDING",
            CaseState::ReadDone => "READ_DONE",
            CaseState::ClosedHealthy => "CLOSED_HEALTHY",
            CaseState::FollowUpScheduled => "FOLLOW_UP_SCHEDULED",
            CaseState::Referred => "REFERRED",
        }
    }
}

impl fmt::Display for CaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        CaseState::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown case state {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LungRads {
    C0,
    C1,
    C2,
    C3,
    C4A,
    C4B,
    C4X,
}

impl LungRads {
    pub const ALL: [LungRads; 7] = [
        LungRads::C0,
        LungRads::C1,
        LungRads::C2,
        LungRads::C3,
        LungRads::C4A,
        LungRads::C4B,
        LungRads::C4X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LungRads::C0 => "0",
            LungRads::C1 => "1",
            LungRads::C2 => "2",
            LungRads::C3 => "3",
            LungRads::C4A => "4A",
            LungRads::C4B => "4B",
            LungRads::C4X => "4X",
        }
    }

    /// Categories that must be backed by at least one nodule.
    pub fn requires_nodules(self) -> bool {
        matches!(self, LungRads::C3 | LungRads::C4A | LungRads::C4B | LungRads::C4X)
    }
}

impl fmt::Display for LungRads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LungRads {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        LungRads::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown Lung-RADS category {s:?}"))
    }
}

impl Serialize for LungRads {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LungRads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(u8),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Number(n) => n.to_string(),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    NoSigns,
    MedicalSupervision,
    AdditionalExamination,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [
        Outcome::NoSigns,
        Outcome::MedicalSupervision,
        Outcome::AdditionalExamination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::NoSigns => "NO_SIGNS",
            Outcome::MedicalSupervision => "MEDICAL_SUPERVISION",
            Outcome::AdditionalExamination => "ADDITIONAL_EXAMINATION",
        }
    }

    /// Wording shown to doctors and used in narratives.
    pub fn phrase(self) -> &'static str {
        match self {
            Outcome::NoSigns => "no signs of malignant neoplasms of the lungs",
            Outcome::MedicalSupervision => "needs medical supervision",
            Outcome::AdditionalExamination => "needs additional examination",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lobe {
    RUL,
    RML,
    RLL,
    LUL,
    LLL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Composition {
    Solid,
    PartSolid,
    GroundGlass,
}

impl Composition {
    pub fn label(self) -> &'static str {
        match self {
            Composition::Solid => "solid",
            Composition::PartSolid => "part-solid",
            Composition::GroundGlass => "ground-glass",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nodule {
    pub lobe: Lobe,
    pub mean_diameter_mm: f64,
    pub composition: Composition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilitySummary {
    pub eligible: bool,
    pub reasons: Vec<String>,
    pub ruleset_version: String,
}

/// Inputs to a case transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseEvent {
    Registered,
    EligibilityChecked { eligible: bool },
    StudyLinked { study_uid: String },
    ReadQueued { study_uid: String },
    ProtocolSubmitted { protocol_id: u64 },
    SecondOpinionRequested { expert_id: String },
    SecondOpinionSubmitted { protocol_id: u64 },
    Finalized {
        outcome: Outcome,
        next_invite_date: Option<NaiveDate>,
        contact_task_id: Option<u64>,
    },
    ContactClosed { task_id: u64 },
    ReInvited,
}

impl CaseEvent {
    pub fn name(&self) -> &'static str {
        match self {
            CaseEvent::Registered => "Registered",
            CaseEvent::EligibilityChecked { .. } => "EligibilityChecked",
            CaseEvent::StudyLinked { .. } => "StudyLinked",
            CaseEvent::ReadQueued { .. } => "ReadQueued",
            CaseEvent::ProtocolSubmitted { .. } => "ProtocolSubmitted",
            CaseEvent::SecondOpinionRequested { .. } => "SecondOpinionRequested",
            CaseEvent::SecondOpinionSubmitted { .. } => "SecondOpinionSubmitted",
            CaseEvent::Finalized { .. } => "Finalized",
            CaseEvent::ContactClosed { .. } => "ContactClosed",
            CaseEvent::ReInvited => "ReInvited",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    #[serde(flatten)]
    pub event: CaseEvent,
    pub at: DateTime<Utc>,
}

/// One participant's screening record. Holds no name, phone or source id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningCase {
    pub pseudonym: Pseudonym,
    pub state: CaseState,
    pub birth_year: Option<i32>,
    pub sex: String,
    pub registered_at: Option<DateTime<Utc>>,
    pub eligibility: Option<EligibilitySummary>,
    pub linked_studies: Vec<String>,
    /// The study the case is currently being read for.
    pub current_study: Option<String>,
    /// Studies that arrived while the case could not take one; linked in
    /// arrival order once it can.
    pub held_studies: Vec<String>,
    pub next_invite_date: Option<NaiveDate>,
    pub contact_task_id: Option<u64>,
    pub history: Vec<HistoryEntry>,
}

impl ScreeningCase {
    pub fn new(pseudonym: Pseudonym) -> Self {
        ScreeningCase {
            pseudonym,
            state: CaseState::Registered,
            birth_year: None,
            sex: String::new(),
            registered_at: None,
            eligibility: None,
            linked_studies: Vec::new(),
            current_study: None,
            held_studies: Vec::new(),
            next_invite_date: None,
            contact_task_id: None,
            history: Vec::new(),
        }
    }

    /// When the case entered its current state.
    pub fn state_since(&self) -> Option<DateTime<Utc>> {
        self.history.last().map(|h| h.at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingProtocol {
    pub protocol_id: u64,
    pub study_uid: String,
    pub pseudonym: Pseudonym,
    pub reader_id: String,
    pub nodules: Vec<Nodule>,
    pub lungrads_category: LungRads,
    pub outcome: Outcome,
    pub narrative: String,
    pub is_second_opinion: bool,
    pub is_final: bool,
    pub created_at: DateTime<Utc>,
}

impl ReadingProtocol {
    pub fn max_diameter(&self) -> Option<f64> {
        self.nodules.iter().map(|n| n.mean_diameter_mm).reduce(f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    Open,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTask {
    pub task_id: u64,
    pub pseudonym: Pseudonym,
    pub study_uid: String,
    pub created_at: DateTime<Utc>,
    pub status: TaskStatus,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_uid: String,
    pub pseudonym: Pseudonym,
    pub modality: String,
    pub study_date: Option<NaiveDate>,
    pub instance_count: usize,
    /// First STUDY_READY for the study.
    pub ready_at: DateTime<Utc>,
    pub protocols: Vec<u64>,
    pub finalized_at: Option<DateTime<Utc>>,
    /// Expert invited for a second opinion.
    pub assigned_expert: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRow {
    pub pseudonym: String,
    pub study_uid: String,
    pub study_date: Option<NaiveDate>,
    pub lungrads_category: LungRads,
    pub outcome: Outcome,
    pub nodule_count: usize,
    pub max_nodule_diameter_mm: Option<f64>,
    pub reader_id: String,
    pub second_opinion: bool,
    pub outlier_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub study_uid: String,
    pub instance_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub row_count: usize,
    pub exported_at: DateTime<Utc>,
    pub ruleset_version: String,
    pub follow_up_days: i64,
    pub rows: Vec<ManifestRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary {
    pub cases: usize,
    pub by_state: std::collections::BTreeMap<String, usize>,
    pub by_category: std::collections::BTreeMap<String, usize>,
    pub by_outcome: std::collections::BTreeMap<String, usize>,
    pub finalized_studies: usize,
    pub second_opinion_rate: f64,
    pub mean_turnaround_hours: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimelineKind {
    Registration,
    Clinical,
    Imaging,
    Protocol,
    Routing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineEntry {
    pub at: DateTime<Utc>,
    pub kind: TimelineKind,
    pub summary: String,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorklistEntry {
    pub study_uid: String,
    pub pseudonym: Pseudonym,
    pub state: CaseState,
    pub assigned_reader: Option<String>,
    pub waiting_since: Option<DateTime<Utc>>,
    pub second_opinion: bool,
}
