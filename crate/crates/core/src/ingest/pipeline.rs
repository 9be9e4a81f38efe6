use std::collections::{HashSet, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use screenforge_queue::QueueLog;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::eligibility::{check_eligibility, EligibilityRules};
use super::harmonize::{self, reason};
use super::model::*;
use super::IngestError;
use crate::deid::{DeidError, Deidentifier};

/// Outcome of one file or push body.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct IngestReport {
    pub origin: String,
    /// Rows, blocks or documents found.
    pub records: usize,
    /// Queue appends made (an EHR document can yield several).
    pub published: usize,
    pub quarantined: usize,
    /// Byte-identical to something already ingested; nothing was done.
    pub duplicate: bool,
    /// Appends waiting in the retry buffer.
    pub pending_retry: usize,
}

struct Pending {
    topic: &'static str,
    key: Vec<u8>,
    payload: Vec<u8>,
}

/// Grabbers for the CRM, RIS and EHR feeds: split, harmonize, de-identify
/// and publish, with quarantine for anything that cannot be harmonized.
pub struct IngestPipeline {
    data_root: PathBuf,
    queue: Arc<QueueLog>,
    deid: Arc<Deidentifier>,
    rules: EligibilityRules,
    seen: Mutex<HashSet<String>>,
    retry: Mutex<VecDeque<Pending>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl IngestPipeline {
    pub fn new(
        data_root: &Path,
        queue: Arc<QueueLog>,
        deid: Arc<Deidentifier>,
        rules: EligibilityRules,
    ) -> Result<Self, IngestError> {
        for src in Source::ALL {
            let dir = data_root.join("inbox").join(src.slug()).join("done");
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let ledger = Self::ledger_path(data_root);
        let seen = match fs::read_to_string(&ledger) {
            Ok(text) => text.lines().map(|l| l.trim().to_string()).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashSet::new(),
            Err(e) => return Err(io_err(&ledger)(e)),
        };
        Ok(IngestPipeline {
            data_root: data_root.to_path_buf(),
            queue,
            deid,
            rules,
            seen: Mutex::new(seen),
            retry: Mutex::new(VecDeque::new()),
        })
    }

    fn ledger_path(root: &Path) -> PathBuf {
        root.join("inbox").join("seen-hashes")
    }

    pub fn inbox(&self, source: Source) -> PathBuf {
        self.data_root.join("inbox").join(source.slug())
    }

    pub fn quarantine_dir(&self) -> PathBuf {
        self.data_root.join("quarantine")
    }

    pub fn rules(&self) -> &EligibilityRules {
        &self.rules
    }

    fn content_hash(source: Source, bytes: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(source.slug().as_bytes());
        h.update([0]);
        h.update(bytes);
        hex::encode(h.finalize())
    }

    fn remember(&self, hash: &str) -> Result<(), IngestError> {
        let path = Self::ledger_path(&self.data_root);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(f, "{hash}").map_err(io_err(&path))?;
        f.sync_all().map_err(io_err(&path))?;
        self.seen.lock().unwrap().insert(hash.to_string());
        Ok(())
    }

    /// Writes one JSON document per entry; the file name is derived from
    /// the content so a re-run does not duplicate entries.
    pub fn quarantine(&self, raw: RawSourceRecord, reason: &str) -> Result<(), IngestError> {
        let dir = self.quarantine_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut h = Sha256::new();
        h.update(raw.origin.as_bytes());
        h.update([0]);
        h.update(reason.as_bytes());
        h.update([0]);
        h.update(&raw.payload);
        let path = dir.join(format!("{}.json", &hex::encode(h.finalize())[..20]));
        warn!(origin = %raw.origin, reason, "quarantined");
        let entry = QuarantineEntry {
            raw,
            reason: reason.to_string(),
            quarantined_at: Utc::now(),
        };
        let body = serde_json::to_vec_pretty(&entry).expect("quarantine entries serialize");
        fs::write(&path, body).map_err(io_err(&path))
    }

    /// Harmonizes and de-identifies one raw record into queue appends.
    /// `Err` carries a quarantine reason.
    fn prepare(
        &self,
        raw: &RawSourceRecord,
        seen_keys: &mut HashSet<String>,
    ) -> Result<Result<Vec<Pending>, String>, IngestError> {
        let source = raw.source;
        let refuse = |e: DeidError| match e {
            DeidError::DeidRefused(_) | DeidError::EmptyExternalId | DeidError::CollisionExhausted { .. } => {
                Ok(format!("DEID_REFUSED:{}", e.public_message()))
            }
            other => Err(IngestError::Deid(other)),
        };
        let to_map = |v: Value| match v {
            Value::Object(m) => m,
            _ => unreachable!("canonical records serialize to objects"),
        };
        let mut out = Vec::new();
        match source {
            Source::Crm => {
                let p = match harmonize::harmonize_participant(raw) {
                    Ok(p) => p,
                    Err(r) => return Ok(Err(r)),
                };
                if !seen_keys.insert(p.source_external_id.clone()) {
                    return Ok(Err(reason::DUP_EXTERNAL_ID.into()));
                }
                let eligibility = check_eligibility(&p, &self.rules, p.registered_at.date_naive());
                let pseudonym = match self.deid.pseudonymize(source.system(), &p.source_external_id) {
                    Ok(ps) => ps,
                    Err(e) => return refuse(e).map(Err),
                };
                self.deid
                    .vault()
                    .record_attributes(&pseudonym, &p.full_name, &p.phone)?;
                let record = to_map(serde_json::to_value(&p).unwrap());
                let mut deid = match self.deid.deid_text(source.system(), &record) {
                    Ok(m) => m,
                    Err(e) => return refuse(e).map(Err),
                };
                deid.insert(
                    "eligibility".into(),
                    json!({
                        "eligible": eligibility.eligible,
                        "reasons": eligibility.reasons,
                        "ruleset_version": eligibility.ruleset_version,
                    }),
                );
                out.push(self.pending(source, deid));
            }
            Source::Ris => {
                let r = match harmonize::harmonize_ris(raw) {
                    Ok(r) => r,
                    Err(e) => return Ok(Err(e)),
                };
                if !seen_keys.insert(r.accession.clone()) {
                    return Ok(Err(reason::DUP_ACCESSION.into()));
                }
                let record = to_map(serde_json::to_value(&r).unwrap());
                match self.deid.deid_text(source.system(), &record) {
                    Ok(m) => out.push(self.pending(source, m)),
                    Err(e) => return refuse(e).map(Err),
                }
            }
            Source::Ehr => {
                let events = match harmonize::harmonize_ehr(raw) {
                    Ok(e) => e,
                    Err(e) => return Ok(Err(e)),
                };
                for ev in events {
                    let record = to_map(serde_json::to_value(&ev).unwrap());
                    match self.deid.deid_text(source.system(), &record) {
                        Ok(m) => out.push(self.pending(source, m)),
                        Err(e) => return refuse(e).map(Err),
                    }
                }
            }
        }
        Ok(Ok(out))
    }

    fn pending(&self, source: Source, record: Map<String, Value>) -> Pending {
        let key = record
            .get("pseudonym")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .as_bytes()
            .to_vec();
        Pending {
            topic: source.topic(),
            key,
            payload: serde_json::to_vec(&Value::Object(record)).unwrap(),
        }
    }

    /// Runs one body through the full grab path. Used by both the inbox
    /// watcher and the HTTP push endpoint.
    pub fn ingest_bytes(
        &self,
        source: Source,
        format: Format,
        origin: &str,
        bytes: &[u8],
    ) -> Result<IngestReport, IngestError> {
        let mut report = IngestReport {
            origin: origin.to_string(),
            ..Default::default()
        };
        let hash = Self::content_hash(source, bytes);
        if self.seen.lock().unwrap().contains(&hash) {
            report.duplicate = true;
            return Ok(report);
        }
        let received_at = Utc::now();
        let raws = match harmonize::split(source, format, origin, bytes, received_at) {
            Ok(r) => r,
            Err(reason) => {
                let whole = RawSourceRecord {
                    source,
                    format,
                    origin: origin.to_string(),
                    payload: bytes.to_vec(),
                    received_at,
                };
                self.quarantine(whole, &reason)?;
                report.records = 1;
                report.quarantined = 1;
                self.remember(&hash)?;
                return Ok(report);
            }
        };
        report.records = raws.len();
        let mut seen_keys = HashSet::new();
        let mut appends = Vec::new();
        for raw in raws {
            match self.prepare(&raw, &mut seen_keys)? {
                Ok(mut p) => appends.append(&mut p),
                Err(reason) => {
                    self.quarantine(raw, &reason)?;
                    report.quarantined += 1;
                }
            }
        }
        for (i, p) in appends.iter().enumerate() {
            if let Err(e) = self.queue.append(p.topic, &p.key, &p.payload) {
                warn!(error = %e, origin, "queue append failed; holding records for retry");
                let mut retry = self.retry.lock().unwrap();
                retry.extend(appends.drain(i..));
                report.pending_retry = retry.len();
                return Ok(report);
            }
            report.published += 1;
        }
        self.remember(&hash)?;
        info!(origin, published = report.published, quarantined = report.quarantined, "ingested");
        Ok(report)
    }

    /// Ingests one file and, once everything is published, moves it to the
    /// source's `done/` directory.
    pub fn ingest_file(&self, source: Source, path: &Path) -> Result<IngestReport, IngestError> {
        let origin = path.display().to_string();
        let format = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(Format::from_extension);
        let report = match (fs::read(path), format) {
            (Err(e), _) => {
                warn!(path = %origin, error = %e, "unreadable inbox file");
                let raw = RawSourceRecord {
                    source,
                    format: format.unwrap_or(Format::Txt),
                    origin: origin.clone(),
                    payload: Vec::new(),
                    received_at: Utc::now(),
                };
                self.quarantine(raw, reason::IO)?;
                IngestReport {
                    origin,
                    records: 1,
                    quarantined: 1,
                    ..Default::default()
                }
            }
            (Ok(bytes), None) => {
                let raw = RawSourceRecord {
                    source,
                    format: Format::Txt,
                    origin: origin.clone(),
                    payload: bytes,
                    received_at: Utc::now(),
                };
                self.quarantine(raw, reason::UNSUPPORTED_FORMAT)?;
                IngestReport {
                    origin,
                    records: 1,
                    quarantined: 1,
                    ..Default::default()
                }
            }
            (Ok(bytes), Some(format)) => self.ingest_bytes(source, format, &origin, &bytes)?,
        };
        if report.pending_retry == 0 {
            let done = self.inbox(source).join("done");
            let name = path.file_name().unwrap_or_default();
            let mut target = done.join(name);
            if target.exists() {
                let stamp = Utc::now().format("%Y%m%dT%H%M%S%3f");
                target = done.join(format!("{stamp}-{}", name.to_string_lossy()));
            }
            if path.exists() {
                fs::rename(path, &target).map_err(io_err(path))?;
            }
        }
        Ok(report)
    }

    /// Processes every file currently in the source's drop directory, in
    /// name order. Dot-files are ignored so writers can stage atomically.
    pub fn poll(&self, source: Source) -> Result<Vec<IngestReport>, IngestError> {
        let dir = self.inbox(source);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && !p
                        .file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        files.sort();
        self.flush_retries()?;
        files.iter().map(|p| self.ingest_file(source, p)).collect()
    }

    pub fn poll_all(&self) -> Result<Vec<IngestReport>, IngestError> {
        let mut out = Vec::new();
        for src in Source::ALL {
            out.extend(self.poll(src)?);
        }
        Ok(out)
    }

    /// Retries buffered appends in order; returns how many remain.
    pub fn flush_retries(&self) -> Result<usize, IngestError> {
        let mut retry = self.retry.lock().unwrap();
        while let Some(p) = retry.front() {
            self.queue.append(p.topic, &p.key, &p.payload)?;
            retry.pop_front();
        }
        Ok(retry.len())
    }

    pub fn pending_retries(&self) -> usize {
        self.retry.lock().unwrap().len()
    }
}
