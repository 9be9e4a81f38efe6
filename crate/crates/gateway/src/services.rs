//! The pipeline pieces opened over one data root, plus the polling cycle
//! that moves data between them.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Context;
use screenforge_core::deid::{DeidPolicy, Deidentifier, SecretKey};
use screenforge_core::ingest::IngestPipeline;
use screenforge_core::pacs::Pacs;
use screenforge_core::registry::Registry;
use screenforge_queue::QueueLog;
use serde::Serialize;

use crate::config::Config;

pub struct Services {
    pub root: PathBuf,
    pub config: Config,
    pub queue: Arc<QueueLog>,
    pub deid: Arc<Deidentifier>,
    pub ingest: IngestPipeline,
    pub pacs: Pacs,
    pub registry: Registry,
}

/// Work done by one [`Services::pump`] cycle.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PumpReport {
    pub files_ingested: usize,
    pub records_published: usize,
    pub instances_routed: usize,
    pub studies_ready: usize,
    pub register_applied: usize,
    pub finalized: usize,
}

impl PumpReport {
    pub fn is_idle(&self) -> bool {
        *self == PumpReport::default()
    }
}

impl Services {
    pub fn open(root: &Path, config: Config, key: SecretKey) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let policy = match &config.deid.policy_file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                DeidPolicy::parse(&text)?
            }
            None => DeidPolicy::default_policy(),
        };
        let queue = Arc::new(QueueLog::open(root)?);
        let deid = Arc::new(Deidentifier::open(root, key, policy)?);
        let ingest = IngestPipeline::new(root, queue.clone(), deid.clone(), config.eligibility.clone())?;
        let pacs = Pacs::open(root, deid.clone(), queue.clone(), config.pacs.quiet_period())?;
        let mut registry_config = config.registry.clone();
        registry_config.ruleset_version = config.eligibility.ruleset_version.clone();
        let registry = Registry::open(root, registry_config)?;
        Ok(Services {
            root: root.to_path_buf(),
            config,
            queue,
            deid,
            ingest,
            pacs,
            registry,
        })
    }

    /// One polling cycle: source inboxes (CRM first so vault attributes
    /// exist before RIS/EHR text is redacted), the PACS drop directory,
    /// quiet-period evaluation, then the register.
    pub fn pump(&self) -> anyhow::Result<PumpReport> {
        self.pump_at(Instant::now())
    }

    fn pump_at(&self, now: Instant) -> anyhow::Result<PumpReport> {
        let mut report = PumpReport::default();
        for r in self.ingest.poll_all()? {
            report.files_ingested += 1;
            report.records_published += r.published;
        }
        report.instances_routed = self.pacs.poll_drop()?.len();
        report.studies_ready = self.pacs.tick_at(now)?.len();
        report.register_applied = self.registry.consume(&self.queue)?.applied;
        if let Some(secs) = self.config.server.auto_finalize_after_secs {
            report.finalized = self.registry.finalize_due(chrono::Duration::seconds(secs as i64))?.len();
        }
        Ok(report)
    }

    /// Runs cycles until nothing moves, treating every pending study as
    /// past its quiet period. Used by batch ingest, where no more
    /// instances will arrive.
    pub fn settle(&self) -> anyhow::Result<PumpReport> {
        let mut total = PumpReport::default();
        loop {
            let later = Instant::now() + self.config.pacs.quiet_period() + Duration::from_secs(1);
            let r = self.pump_at(later)?;
            if r.is_idle() {
                return Ok(total);
            }
            total.files_ingested += r.files_ingested;
            total.records_published += r.records_published;
            total.instances_routed += r.instances_routed;
            total.studies_ready += r.studies_ready;
            total.register_applied += r.register_applied;
            total.finalized += r.finalized;
        }
    }
}
