//! Source grabbers for the CRM register, RIS protocols and EHR extracts.
//!
//! Files dropped in `<data_root>/inbox/{crm,ris,ehr}/` (or pushed over
//! HTTP) are split into rows, harmonized into canonical records, checked
//! for eligibility, de-identified and appended to the source's topic keyed
//! by pseudonym. Rows that cannot be harmonized go to
//! `<data_root>/quarantine/`; nothing is dropped silently.

mod eligibility;
mod harmonize;
mod model;
mod pipeline;

use std::path::PathBuf;

use thiserror::Error;

pub use eligibility::{age_on, check_eligibility, EligibilityRules};
pub use harmonize::{
    harmonize_ehr, harmonize_participant, harmonize_ris, reason, split, CRM_COLUMNS, RIS_COLUMNS,
    RIS_TXT_KEYS,
};
pub use model::*;
pub use pipeline::{IngestPipeline, IngestReport};

pub const TOPIC_PARTICIPANTS: &str = "participants";
pub const TOPIC_RIS: &str = "ris-protocols";
pub const TOPIC_EHR: &str = "ehr-events";
pub const TOPIC_IMAGING: &str = "imaging-events";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Queue(#[from] screenforge_queue::QueueError),
    #[error(transparent)]
    Deid(#[from] crate::deid::DeidError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
