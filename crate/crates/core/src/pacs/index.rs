use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use screenforge_dicom::{parse, tags, DicomFile};
use serde::{Deserialize, Serialize};

use crate::deid::Pseudonym;

/// Per-instance facts the index keeps; study entries are derived from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub study_uid: String,
    pub series_uid: String,
    pub sop_uid: String,
    pub pseudonym: Pseudonym,
    pub modality: String,
    pub study_date: Option<NaiveDate>,
    pub instance_number: Option<i64>,
    /// File modification time, so a rebuild from disk reproduces it.
    pub stored_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub series_uid: String,
    pub instance_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyIndexEntry {
    pub study_uid: String,
    pub pseudonym: Pseudonym,
    pub modality: String,
    pub study_date: Option<NaiveDate>,
    pub series: Vec<SeriesEntry>,
    pub stored_at: DateTime<Utc>,
}

impl StudyIndexEntry {
    pub fn instance_count(&self) -> usize {
        self.series.iter().map(|s| s.instance_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceRef {
    pub study_uid: String,
    pub series_uid: String,
    pub sop_uid: String,
    pub instance_number: Option<i64>,
}

/// Keyed by SOP instance UID.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub instances: BTreeMap<String, InstanceMeta>,
}

/// What a disk scan found besides the index itself.
#[derive(Debug, Default)]
pub struct Scan {
    pub index: Index,
    /// `.dcm` files that failed to parse or sit at the wrong path.
    pub corrupt: Vec<PathBuf>,
}

pub(crate) fn instance_path(root: &Path, study: &str, series: &str, sop: &str) -> PathBuf {
    root.join(study).join(series).join(format!("{sop}.dcm"))
}

pub(crate) fn mtime(path: &Path) -> std::io::Result<DateTime<Utc>> {
    Ok(fs::metadata(path)?.modified()?.into())
}

pub(crate) fn parse_da(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y%m%d").ok()
}

/// Index facts for a de-identified file.
pub(crate) fn meta_of(file: &DicomFile, stored_at: DateTime<Utc>) -> Option<InstanceMeta> {
    let ds = &file.dataset;
    let text = |t| ds.text(t).filter(|s| !s.is_empty());
    Some(InstanceMeta {
        study_uid: text(tags::STUDY_INSTANCE_UID)?,
        series_uid: text(tags::SERIES_INSTANCE_UID)?,
        sop_uid: text(tags::SOP_INSTANCE_UID)?,
        pseudonym: text(tags::PATIENT_ID)?.parse().ok()?,
        modality: text(tags::MODALITY).unwrap_or_default(),
        study_date: text(tags::STUDY_DATE).as_deref().and_then(parse_da),
        instance_number: text(tags::INSTANCE_NUMBER).and_then(|s| s.trim().parse().ok()),
        stored_at,
    })
}

/// Lists `<root>/<study>/<series>/<sop>.dcm` paths without reading them.
pub(crate) fn list_files(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let dirs = |p: &Path| -> std::io::Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(p)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    if !root.is_dir() {
        return Ok(out);
    }
    for study in dirs(root)? {
        for series in dirs(&study)? {
            let mut files: Vec<PathBuf> = fs::read_dir(&series)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "dcm"))
                .collect();
            files.sort();
            out.extend(files);
        }
    }
    Ok(out)
}

/// Rebuilds the index by parsing every stored file.
pub fn scan(root: &Path) -> std::io::Result<Scan> {
    let mut out = Scan::default();
    for path in list_files(root)? {
        let bytes = fs::read(&path)?;
        let meta = parse(&bytes)
            .ok()
            .and_then(|f| meta_of(&f, mtime(&path).ok()?))
            .filter(|m| instance_path(root, &m.study_uid, &m.series_uid, &m.sop_uid) == path);
        match meta {
            Some(m) => {
                out.index.instances.insert(m.sop_uid.clone(), m);
            }
            None => out.corrupt.push(path),
        }
    }
    Ok(out)
}

impl Index {
    /// True when the index lists exactly the files on disk with their
    /// current modification times.
    pub(crate) fn matches_listing(&self, root: &Path, files: &[PathBuf]) -> bool {
        if files.len() != self.instances.len() {
            return false;
        }
        files.iter().all(|path| {
            let sop = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            self.instances.get(sop).is_some_and(|m| {
                instance_path(root, &m.study_uid, &m.series_uid, &m.sop_uid) == *path
                    && mtime(path).ok() == Some(m.stored_at)
            })
        })
    }

    /// Study entries; study-level attributes come from the instance with the
    /// lowest SOP UID so they do not depend on arrival order.
    pub fn studies(&self) -> BTreeMap<String, StudyIndexEntry> {
        let mut out: BTreeMap<String, StudyIndexEntry> = BTreeMap::new();
        for m in self.instances.values() {
            let entry = out.entry(m.study_uid.clone()).or_insert_with(|| StudyIndexEntry {
                study_uid: m.study_uid.clone(),
                pseudonym: m.pseudonym.clone(),
                modality: m.modality.clone(),
                study_date: m.study_date,
                series: Vec::new(),
                stored_at: m.stored_at,
            });
            entry.stored_at = entry.stored_at.min(m.stored_at);
            match entry.series.iter_mut().find(|s| s.series_uid == m.series_uid) {
                Some(s) => s.instance_count += 1,
                None => entry.series.push(SeriesEntry {
                    series_uid: m.series_uid.clone(),
                    instance_count: 1,
                }),
            }
        }
        for e in out.values_mut() {
            e.series.sort_by(|a, b| a.series_uid.cmp(&b.series_uid));
        }
        out
    }

    pub fn study(&self, study_uid: &str) -> Option<StudyIndexEntry> {
        // Small enough at desk scale to derive on demand.
        self.studies().remove(study_uid)
    }

    pub fn instance_count(&self, study_uid: &str) -> usize {
        self.instances.values().filter(|m| m.study_uid == study_uid).count()
    }
}
