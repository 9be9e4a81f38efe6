//! Offline integrity suite behind `screenctl verify`. Must run while no
//! server holds the data root (topic locks are exclusive).

use std::fs;
use std::path::{Path, PathBuf};

use screenforge_core::deid::Vault;
use screenforge_core::ingest::{TOPIC_EHR, TOPIC_IMAGING, TOPIC_PARTICIPANTS, TOPIC_RIS};
use screenforge_core::pacs;
use screenforge_core::registry::{input_hash, ExportFilter, Registry, RegistryConfig, CONSUMER};
use screenforge_queue::{QueueError, QueueLog, Topic, TopicOptions};
use serde::Serialize;

/// Top-level directories that legitimately hold identified data and are
/// left out of the leak scan.
pub const IDENTIFIED_DIRS: [&str; 5] = ["vault", "inbox", "quarantine", "external-pacs", "pacs-quarantine"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn render(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("[{}] {}: {}\n", if c.ok { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect()
    }
}

fn check(name: &'static str, result: anyhow::Result<Result<String, String>>) -> Check {
    match result {
        Ok(Ok(detail)) => Check { name, ok: true, detail },
        Ok(Err(detail)) => Check { name, ok: false, detail },
        Err(e) => Check { name, ok: false, detail: format!("{e:#}") },
    }
}

pub fn verify(root: &Path) -> VerifyReport {
    let queue = check("queue", check_queue(root));
    let pacs = check("pacs", check_pacs(root));
    let registry = check("registry", check_registry(root));
    let leaks = check("leak-scan", check_leaks(root));
    VerifyReport {
        checks: vec![queue, pacs, registry, leaks],
    }
}

fn recover_topic(result: Result<u64, QueueError>, name: &str, truncated: &mut Vec<String>) -> Result<(), String> {
    match result {
        Ok(0) => Ok(()),
        Ok(bytes) => {
            truncated.push(format!("{name} (torn tail of {bytes} bytes removed)"));
            Ok(())
        }
        Err(QueueError::Corruption { topic, offset, segment, position }) => Err(format!(
            "topic {topic} corrupt at offset {offset} ({}:{position})",
            segment.display()
        )),
        Err(e) => Err(format!("topic {name}: {e}")),
    }
}

/// Recovery over every queue topic, the register journal and the vault.
fn check_queue(root: &Path) -> anyhow::Result<Result<String, String>> {
    let queue = QueueLog::open(root)?;
    let mut names = queue.topic_names()?;
    let mut truncated = Vec::new();
    for name in &names {
        let r = queue.recover_with_report(name).map(|r| r.truncated_bytes);
        if let Err(e) = recover_topic(r, name, &mut truncated) {
            return Ok(Err(e));
        }
    }
    drop(queue);
    for (dir, name) in [(root.join("registry").join("journal"), "journal"), (root.join("vault"), "vault")] {
        if !dir.exists() {
            continue;
        }
        let topic = Topic::open(&dir, name, TopicOptions::default())?;
        let r = topic.recover_with_report().map(|r| r.truncated_bytes);
        if let Err(e) = recover_topic(r, name, &mut truncated) {
            return Ok(Err(e));
        }
        names.push(name.to_string());
    }
    let mut detail = format!("{} topics recovered cleanly", names.len());
    if !truncated.is_empty() {
        detail = format!("{} topics recovered; {}", names.len(), truncated.join(", "));
    }
    Ok(Ok(detail))
}

fn check_pacs(root: &Path) -> anyhow::Result<Result<String, String>> {
    Ok(pacs::verify_store(root)?.map(|n| format!("{n} instances, index matches a rebuild from disk")))
}

/// Journal replay equals the live register, every upstream record up to the
/// register's cursor was consumed, exports are deterministic and every
/// study the register knows is stored in the PACS.
fn check_registry(root: &Path) -> anyhow::Result<Result<String, String>> {
    let registry = Registry::open(root, RegistryConfig::default())?;
    if let Err(e) = registry.replay_check()? {
        return Ok(Err(e));
    }
    let snap = registry.snapshot();
    let queue = QueueLog::open(root)?;
    let mut upstream = 0;
    for topic in [TOPIC_PARTICIPANTS, TOPIC_EHR, TOPIC_RIS, TOPIC_IMAGING] {
        let cursor = queue.resume(CONSUMER, topic)?;
        let records = match queue.read(topic, 0, cursor as usize) {
            Ok(r) => r,
            Err(QueueError::UnknownTopic(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        for r in records {
            upstream += 1;
            if !snap.seen.contains(&input_hash(topic, &r.key, &r.payload)) {
                return Ok(Err(format!("{topic} offset {} was committed but never applied", r.offset)));
            }
        }
    }
    let a = registry.export(&ExportFilter::default());
    let b = registry.export(&ExportFilter::default());
    if a.csv != b.csv {
        return Ok(Err("two exports of an unchanged register differ".into()));
    }
    let stored = pacs::scan(&root.join("pacs"))?.index;
    if let Some(missing) = snap.studies.keys().find(|uid| stored.study(uid).is_none()) {
        return Ok(Err(format!("study {missing} is in the register but not in the PACS")));
    }
    Ok(Ok(format!(
        "journal of {} entries replays to the live register; {upstream} upstream records accounted for; {} export rows",
        registry.journal_len(),
        a.rows.len()
    )))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            files_under(&path, out)?;
        } else if path.is_file() {
            out.push(path);
        }
    }
    Ok(())
}

/// Strings that must never appear outside the identified directories:
/// every vault identity string, names also as "Given Surname" and
/// "Surname Given", and phones also as bare digits.
pub fn leak_needles(identity: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for s in identity {
        out.push(s.clone());
        if let Some((surname, given)) = s.split_once('^') {
            out.push(format!("{given} {surname}"));
            out.push(format!("{surname} {given}"));
        }
        let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
        if s.starts_with('+') && digits.len() >= 7 {
            out.push(digits);
        }
    }
    out.retain(|n| n.len() >= 4);
    out.sort();
    out.dedup();
    out
}

/// Byte scan of everything outside [`IDENTIFIED_DIRS`]. Returns the files
/// scanned, or the first leak found (file and which needle, by index into
/// the sorted needle list so the report does not repeat the value).
pub fn scan_for_leaks(root: &Path, needles: &[String]) -> anyhow::Result<Result<usize, String>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if IDENTIFIED_DIRS.contains(&name.as_str()) {
            continue;
        }
        if path.is_dir() {
            files_under(&path, &mut files)?;
        } else if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if needles.is_empty() {
        return Ok(Ok(files.len()));
    }
    let pattern = needles.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|");
    let re = regex::bytes::RegexBuilder::new(&pattern)
        .case_insensitive(true)
        .size_limit(64 << 20)
        .build()?;
    for f in &files {
        let bytes = fs::read(f)?;
        if let Some(m) = re.find(&bytes) {
            let hit = String::from_utf8_lossy(m.as_bytes()).to_lowercase();
            let which = needles.iter().position(|n| n.to_lowercase() == hit).unwrap_or(usize::MAX);
            return Ok(Err(format!("identifying value #{which} found in {}", f.display())));
        }
    }
    Ok(Ok(files.len()))
}

fn check_leaks(root: &Path) -> anyhow::Result<Result<String, String>> {
    let vault_dir = root.join("vault");
    if !vault_dir.exists() {
        return Ok(Ok("no vault; nothing to scan for".into()));
    }
    let vault = Vault::open(&vault_dir)?;
    let needles = leak_needles(&vault.identity_strings());
    drop(vault);
    Ok(scan_for_leaks(root, &needles)?
        .map(|n| format!("{n} files scanned for {} identifying strings, none found", needles.len())))
}
