//! PACS router and internal PACS.
//!
//! Incoming instances are de-identified, written canonically to
//! `<data_root>/pacs/<study>/<series>/<sop>.dcm` (remapped UIDs) and
//! indexed. A sidecar `index.json` speeds up start-up; when it disagrees
//! with the tree the index is rebuilt from disk. After a study has been
//! quiet for the configured period a `STUDY_READY` event is appended to
//! the `imaging-events` topic, keyed by study UID.

mod index;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, Utc};
use screenforge_dicom::{parse, serialize, DicomError};
use screenforge_queue::{QueueError, QueueLog};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use crate::deid::{DeidError, Deidentifier, Pseudonym};
use crate::ingest::TOPIC_IMAGING;

pub use index::{scan, Index, InstanceMeta, InstanceRef, Scan, SeriesEntry, StudyIndexEntry};
use index::{instance_path, list_files, meta_of, mtime};

pub const DEFAULT_QUIET_PERIOD: Duration = Duration::from_secs(5);

pub mod reason {
    pub const NOT_DICOM: &str = "NOT_DICOM";
    pub const UNSUPPORTED_TRANSFER_SYNTAX: &str = "UNSUPPORTED_TRANSFER_SYNTAX";
    pub const MALFORMED: &str = "MALFORMED";
    pub const DEID_REFUSED: &str = "DEID_REFUSED";
    pub const MISSING_UID: &str = "MISSING_UID";
    pub const SOP_CONFLICT: &str = "SOP_CONFLICT";
}

#[derive(Debug, Error)]
pub enum PacsError {
    #[error("no instance {0}")]
    NotFound(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Deid(#[from] DeidError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PacsError + '_ {
    move |source| PacsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImagingEventKind {
    StudyReady,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingEvent {
    pub kind: ImagingEventKind,
    pub study_uid: String,
    pub pseudonym: Pseudonym,
    pub instance_count: usize,
    pub modality: String,
    pub study_date: Option<NaiveDate>,
    pub emitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteOutcome {
    Stored(InstanceRef),
    /// Identical bytes were already stored.
    Unchanged(InstanceRef),
    Quarantined { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    All,
    Study(String),
    Pseudonym(String),
}

#[derive(Debug, Serialize)]
struct QuarantineRecord<'a> {
    origin: &'a str,
    reason: &'a str,
    detail: &'a str,
    sha256: &'a str,
    payload_file: &'a str,
    quarantined_at: DateTime<Utc>,
}

pub struct Pacs {
    data_root: PathBuf,
    store: PathBuf,
    deid: Arc<Deidentifier>,
    queue: Arc<QueueLog>,
    quiet_period: Duration,
    index: RwLock<Index>,
    study_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    /// Last arrival per study not yet announced.
    pending: Mutex<HashMap<String, Instant>>,
    /// Instance count in the latest STUDY_READY per study.
    announced: Mutex<HashMap<String, usize>>,
}

impl Pacs {
    pub fn open(
        data_root: &Path,
        deid: Arc<Deidentifier>,
        queue: Arc<QueueLog>,
        quiet_period: Duration,
    ) -> Result<Self, PacsError> {
        let store = data_root.join("pacs");
        fs::create_dir_all(&store).map_err(io_err(&store))?;
        let drop_dir = data_root.join("external-pacs").join("done");
        fs::create_dir_all(&drop_dir).map_err(io_err(&drop_dir))?;

        let sidecar = store.join("index.json");
        let files = list_files(&store).map_err(io_err(&store))?;
        let cached: Option<Index> = fs::read(&sidecar)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let index = match cached {
            Some(ix) if ix.matches_listing(&store, &files) => ix,
            _ => {
                let scan = scan(&store).map_err(io_err(&store))?;
                if !scan.corrupt.is_empty() {
                    warn!(count = scan.corrupt.len(), "unreadable files in internal PACS");
                }
                info!(instances = scan.index.instances.len(), "rebuilt PACS index from disk");
                scan.index
            }
        };

        let mut announced = HashMap::new();
        if let Ok(records) = queue.read(TOPIC_IMAGING, 0, usize::MAX) {
            for r in records {
                if let Ok(ev) = serde_json::from_slice::<ImagingEvent>(&r.payload) {
                    announced.insert(ev.study_uid, ev.instance_count);
                }
            }
        }
        // Studies whose latest count was never announced (crash inside the
        // quiet period) are rescheduled.
        let now = Instant::now();
        let pending = index
            .studies()
            .into_values()
            .filter(|s| announced.get(&s.study_uid) != Some(&s.instance_count()))
            .map(|s| (s.study_uid, now))
            .collect();

        let pacs = Pacs {
            data_root: data_root.to_path_buf(),
            store,
            deid,
            queue,
            quiet_period,
            index: RwLock::new(index),
            study_locks: Mutex::new(HashMap::new()),
            pending: Mutex::new(pending),
            announced: Mutex::new(announced),
        };
        pacs.save_index()?;
        Ok(pacs)
    }

    pub fn store_dir(&self) -> &Path {
        &self.store
    }

    pub fn drop_dir(&self) -> PathBuf {
        self.data_root.join("external-pacs")
    }

    pub fn quarantine_dir(&self) -> PathBuf {
        self.data_root.join("pacs-quarantine")
    }

    fn save_index(&self) -> Result<(), PacsError> {
        let body = serde_json::to_vec(&*self.index.read().unwrap()).expect("index serializes");
        write_atomic(&self.store.join("index.json"), &body)
    }

    fn study_lock(&self, study: &str) -> Arc<Mutex<()>> {
        self.study_locks
            .lock()
            .unwrap()
            .entry(study.to_string())
            .or_default()
            .clone()
    }

    fn quarantine(&self, origin: &str, bytes: &[u8], reason: &str, detail: &str) -> Result<RouteOutcome, PacsError> {
        let dir = self.quarantine_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let hash = hex::encode(Sha256::digest(bytes));
        let stem = &hash[..20];
        let payload_file = format!("{stem}.bin");
        write_atomic(&dir.join(&payload_file), bytes)?;
        let record = QuarantineRecord {
            origin,
            reason,
            detail,
            sha256: &hash,
            payload_file: &payload_file,
            quarantined_at: Utc::now(),
        };
        let body = serde_json::to_vec_pretty(&record).expect("quarantine record serializes");
        write_atomic(&dir.join(format!("{stem}.json")), &body)?;
        warn!(origin, reason, detail, "DICOM quarantined");
        Ok(RouteOutcome::Quarantined {
            reason: reason.to_string(),
        })
    }

    /// De-identifies and stores one instance.
    pub fn route(&self, bytes: &[u8], origin: &str) -> Result<RouteOutcome, PacsError> {
        let file = match parse(bytes) {
            Ok(f) => f,
            Err(DicomError::NotDicom) => return self.quarantine(origin, bytes, reason::NOT_DICOM, ""),
            Err(DicomError::UnsupportedTransferSyntax(ts)) => {
                return self.quarantine(origin, bytes, reason::UNSUPPORTED_TRANSFER_SYNTAX, &ts)
            }
            Err(e) => return self.quarantine(origin, bytes, reason::MALFORMED, &e.to_string()),
        };
        let (deid, _audit) = match self.deid.deid_dicom(&file) {
            Ok(r) => r,
            Err(
                e @ (DeidError::DeidRefused(_)
                | DeidError::MalformedUid(_)
                | DeidError::UidCollision(_)
                | DeidError::EmptyExternalId
                | DeidError::CollisionExhausted { .. }
                | DeidError::Dicom(_)),
            ) => return self.quarantine(origin, bytes, reason::DEID_REFUSED, &e.public_message()),
            Err(e) => return Err(e.into()),
        };
        let Some(draft) = meta_of(&deid, Utc::now()) else {
            return self.quarantine(origin, bytes, reason::MISSING_UID, "");
        };
        let canonical = match serialize(&deid) {
            Ok(b) => b,
            Err(e) => return self.quarantine(origin, bytes, reason::MALFORMED, &e.to_string()),
        };

        let lock = self.study_lock(&draft.study_uid);
        let _guard = lock.lock().unwrap();
        let path = instance_path(&self.store, &draft.study_uid, &draft.series_uid, &draft.sop_uid);
        let r = InstanceRef {
            study_uid: draft.study_uid.clone(),
            series_uid: draft.series_uid.clone(),
            sop_uid: draft.sop_uid.clone(),
            instance_number: draft.instance_number,
        };
        let existing = self.index.read().unwrap().instances.get(&draft.sop_uid).cloned();
        if let Some(prev) = existing {
            let same_place = prev.study_uid == draft.study_uid && prev.series_uid == draft.series_uid;
            if same_place && fs::read(&path).ok().as_deref() == Some(canonical.as_slice()) {
                return Ok(RouteOutcome::Unchanged(r));
            }
            return self.quarantine(origin, bytes, reason::SOP_CONFLICT, &draft.sop_uid);
        }

        write_atomic(&path, &canonical)?;
        let meta = InstanceMeta {
            stored_at: mtime(&path).map_err(io_err(&path))?,
            ..draft
        };
        self.index
            .write()
            .unwrap()
            .instances
            .insert(meta.sop_uid.clone(), meta);
        self.save_index()?;
        self.pending
            .lock()
            .unwrap()
            .insert(r.study_uid.clone(), Instant::now());
        info!(study = %r.study_uid, sop = %r.sop_uid, "stored instance");
        Ok(RouteOutcome::Stored(r))
    }

    /// Routes every file in the external-PACS drop directory, in name
    /// order, and archives it to `done/`.
    pub fn poll_drop(&self) -> Result<Vec<RouteOutcome>, PacsError> {
        let dir = self.drop_dir();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        files.sort();
        let mut out = Vec::new();
        for path in files {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            out.push(self.route(&bytes, &path.display().to_string())?);
            let target = dir.join("done").join(path.file_name().unwrap());
            fs::rename(&path, &target).map_err(io_err(&path))?;
        }
        Ok(out)
    }

    /// Announces every study that has been quiet for the configured period.
    pub fn tick(&self) -> Result<Vec<ImagingEvent>, PacsError> {
        self.tick_at(Instant::now())
    }

    pub fn tick_at(&self, now: Instant) -> Result<Vec<ImagingEvent>, PacsError> {
        let due: Vec<String> = {
            let pending = self.pending.lock().unwrap();
            let index = self.index.read().unwrap();
            // Chronological, so a participant's earlier round is announced
            // before a later one that arrived in the same batch.
            let mut v: Vec<(Option<NaiveDate>, String)> = pending
                .iter()
                .filter(|(_, last)| now.saturating_duration_since(**last) >= self.quiet_period)
                .map(|(s, _)| (index.study(s).and_then(|e| e.study_date), s.clone()))
                .collect();
            v.sort();
            v.into_iter().map(|(_, s)| s).collect()
        };
        let mut out = Vec::new();
        for study in due {
            if let Some(ev) = self.finalize_study(&study)? {
                out.push(ev);
            }
        }
        Ok(out)
    }

    /// Appends STUDY_READY for the study's current instance count, unless
    /// that count was already announced. No instances, no event.
    pub fn finalize_study(&self, study_uid: &str) -> Result<Option<ImagingEvent>, PacsError> {
        let lock = self.study_lock(study_uid);
        let _guard = lock.lock().unwrap();
        self.pending.lock().unwrap().remove(study_uid);
        let Some(entry) = self.index.read().unwrap().study(study_uid) else {
            return Ok(None);
        };
        let count = entry.instance_count();
        if self.announced.lock().unwrap().get(study_uid) == Some(&count) {
            return Ok(None);
        }
        let ev = ImagingEvent {
            kind: ImagingEventKind::StudyReady,
            study_uid: entry.study_uid,
            pseudonym: entry.pseudonym,
            instance_count: count,
            modality: entry.modality,
            study_date: entry.study_date,
            emitted_at: Utc::now(),
        };
        let payload = serde_json::to_vec(&ev).expect("imaging events serialize");
        self.queue.append(TOPIC_IMAGING, ev.study_uid.as_bytes(), &payload)?;
        self.announced
            .lock()
            .unwrap()
            .insert(ev.study_uid.clone(), count);
        info!(study = %ev.study_uid, instances = count, "study ready");
        Ok(Some(ev))
    }

    pub fn pending_studies(&self) -> usize {
        self.pending.lock().unwrap().len()
    }

    /// Matching studies sorted by study date (undated first), then UID.
    pub fn query(&self, selector: &Selector) -> Vec<StudyIndexEntry> {
        let studies = self.index.read().unwrap().studies();
        let mut out: Vec<StudyIndexEntry> = studies
            .into_values()
            .filter(|s| match selector {
                Selector::All => true,
                Selector::Study(uid) => &s.study_uid == uid,
                Selector::Pseudonym(p) => s.pseudonym.as_str() == p,
            })
            .collect();
        out.sort_by(|a, b| (a.study_date, &a.study_uid).cmp(&(b.study_date, &b.study_uid)));
        out
    }

    pub fn study(&self, study_uid: &str) -> Option<StudyIndexEntry> {
        self.index.read().unwrap().study(study_uid)
    }

    /// Instances of a study ordered by series, instance number, SOP UID.
    pub fn instances(&self, study_uid: &str) -> Vec<InstanceRef> {
        let index = self.index.read().unwrap();
        let mut v: Vec<InstanceRef> = index
            .instances
            .values()
            .filter(|m| m.study_uid == study_uid)
            .map(|m| InstanceRef {
                study_uid: m.study_uid.clone(),
                series_uid: m.series_uid.clone(),
                sop_uid: m.sop_uid.clone(),
                instance_number: m.instance_number,
            })
            .collect();
        v.sort_by(|a, b| {
            (&a.series_uid, a.instance_number, &a.sop_uid).cmp(&(&b.series_uid, b.instance_number, &b.sop_uid))
        });
        v
    }

    pub fn instance(&self, sop_uid: &str) -> Option<InstanceMeta> {
        self.index.read().unwrap().instances.get(sop_uid).cloned()
    }

    /// Exact stored bytes.
    pub fn retrieve(&self, sop_uid: &str) -> Result<Vec<u8>, PacsError> {
        let meta = self
            .instance(sop_uid)
            .ok_or_else(|| PacsError::NotFound(sop_uid.to_string()))?;
        let path = instance_path(&self.store, &meta.study_uid, &meta.series_uid, &meta.sop_uid);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn index_snapshot(&self) -> Index {
        self.index.read().unwrap().clone()
    }

    /// Rebuilds from disk and compares with the live index.
    pub fn check_coherence(&self) -> Result<Result<(), String>, PacsError> {
        let scan = scan(&self.store).map_err(io_err(&self.store))?;
        if let Some(p) = scan.corrupt.first() {
            return Ok(Err(format!("unreadable or misplaced instance {}", p.display())));
        }
        let live = self.index_snapshot();
        if scan.index != live {
            return Ok(Err(format!(
                "index lists {} instances, disk holds {}",
                live.instances.len(),
                scan.index.instances.len()
            )));
        }
        Ok(Ok(()))
    }
}

/// Offline check of `<data_root>/pacs`: every file parses and sits at its
/// UID path, and the sidecar index (if any) equals a rebuild from disk.
/// Returns the number of instances on success.
pub fn verify_store(data_root: &Path) -> Result<Result<usize, String>, PacsError> {
    let store = data_root.join("pacs");
    if !store.exists() {
        return Ok(Ok(0));
    }
    let scan = scan(&store).map_err(io_err(&store))?;
    if let Some(p) = scan.corrupt.first() {
        return Ok(Err(format!("unreadable or misplaced instance {}", p.display())));
    }
    let sidecar = store.join("index.json");
    if let Ok(bytes) = fs::read(&sidecar) {
        match serde_json::from_slice::<Index>(&bytes) {
            Ok(ix) if ix == scan.index => {}
            Ok(ix) => {
                return Ok(Err(format!(
                    "sidecar index lists {} instances, rebuild from disk finds {}",
                    ix.instances.len(),
                    scan.index.instances.len()
                )))
            }
            Err(e) => return Ok(Err(format!("sidecar index unreadable: {e}"))),
        }
    }
    Ok(Ok(scan.index.instances.len()))
}

/// Temp file, fsync, rename, fsync directory.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PacsError> {
    let dir = path.parent().expect("target has a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().unwrap().to_string_lossy()
    ));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}
