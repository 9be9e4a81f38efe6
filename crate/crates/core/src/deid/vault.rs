use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use screenforge_queue::{Topic, TopicOptions};
use serde::{Deserialize, Serialize};

use super::key::SecretKey;
use super::DeidError;

/// Systems an identity can arrive from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceSystem {
    Crm,
    Ris,
    Ehr,
    Pacs,
}

impl SourceSystem {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceSystem::Crm => "CRM",
            SourceSystem::Ris => "RIS",
            SourceSystem::Ehr => "EHR",
            SourceSystem::Pacs => "PACS",
        }
    }
}

impl fmt::Display for SourceSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identities from every source share one external-id namespace, so the
/// pseudonym is always derived under this namespace.
pub const ANCHOR_SOURCE: SourceSystem = SourceSystem::Crm;

pub const SHORT_HEX: usize = 16;
pub const LONG_HEX: usize = 24;

/// `P` followed by 16 (or, after a collision, 24) lowercase hex digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pseudonym(String);

impl Pseudonym {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_valid(s: &str) -> bool {
        s.strip_prefix('P').is_some_and(|hex| {
            (hex.len() == SHORT_HEX || hex.len() == LONG_HEX)
                && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
        })
    }

    fn derive(mac: &[u8; 32], hex_len: usize) -> Self {
        Pseudonym(format!("P{}", &hex::encode(mac)[..hex_len]))
    }
}

impl FromStr for Pseudonym {
    type Err = DeidError;
    fn from_str(s: &str) -> Result<Self, DeidError> {
        if Pseudonym::is_valid(s) {
            Ok(Pseudonym(s.to_string()))
        } else {
            Err(DeidError::InvalidPseudonym(s.to_string()))
        }
    }
}

impl TryFrom<String> for Pseudonym {
    type Error = DeidError;
    fn try_from(s: String) -> Result<Self, DeidError> {
        s.parse()
    }
}

impl From<Pseudonym> for String {
    fn from(p: Pseudonym) -> String {
        p.0
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityVaultEntry {
    pub source_system: SourceSystem,
    pub external_id: String,
    pub pseudonym: Pseudonym,
    pub created_at: DateTime<Utc>,
}

/// Contact and name details kept beside the entries so free text can be
/// redacted and referred participants can be called.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityAttributes {
    pub pseudonym: Pseudonym,
    pub full_name: String,
    pub phone: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum VaultRecord {
    Entry(IdentityVaultEntry),
    Attributes(IdentityAttributes),
}

#[derive(Default)]
struct State {
    by_identity: HashMap<(SourceSystem, String), Pseudonym>,
    by_external: HashMap<String, Pseudonym>,
    holder: HashMap<Pseudonym, String>,
    attributes: HashMap<Pseudonym, IdentityAttributes>,
    entries: Vec<IdentityVaultEntry>,
}

impl State {
    fn apply(&mut self, record: VaultRecord) {
        match record {
            VaultRecord::Entry(e) => {
                self.by_identity
                    .insert((e.source_system, e.external_id.clone()), e.pseudonym.clone());
                self.by_external
                    .entry(e.external_id.clone())
                    .or_insert_with(|| e.pseudonym.clone());
                self.holder
                    .entry(e.pseudonym.clone())
                    .or_insert_with(|| e.external_id.clone());
                self.entries.push(e);
            }
            VaultRecord::Attributes(a) => {
                self.attributes.insert(a.pseudonym.clone(), a);
            }
        }
    }
}

/// Append-only identity store under `<data_root>/vault/`, framed like a
/// queue topic. Lookups take a shared lock; misses funnel to one writer.
pub struct Vault {
    topic: Topic,
    state: RwLock<State>,
    writer: Mutex<()>,
}

impl Vault {
    pub fn open(dir: &Path) -> Result<Self, DeidError> {
        let topic = Topic::open(dir, "vault", TopicOptions::default())?;
        if topic.is_read_only() {
            topic.recover()?;
        }
        let mut state = State::default();
        let mut from = 0;
        loop {
            let batch = topic.read(from, 1024)?;
            if batch.is_empty() {
                break;
            }
            for r in &batch {
                let record: VaultRecord = serde_json::from_slice(&r.payload)
                    .map_err(|e| DeidError::VaultFormat(format!("offset {}: {e}", r.offset)))?;
                state.apply(record);
            }
            from += batch.len() as u64;
        }
        Ok(Vault {
            topic,
            state: RwLock::new(state),
            writer: Mutex::new(()),
        })
    }

    fn persist(&self, record: VaultRecord) -> Result<(), DeidError> {
        let key = match &record {
            VaultRecord::Entry(e) => e.pseudonym.as_str().as_bytes().to_vec(),
            VaultRecord::Attributes(a) => a.pseudonym.as_str().as_bytes().to_vec(),
        };
        let payload = serde_json::to_vec(&record).expect("vault records serialize");
        self.topic.append(&key, &payload)?;
        self.state.write().unwrap().apply(record);
        Ok(())
    }

    pub fn lookup(&self, source: SourceSystem, external_id: &str) -> Option<Pseudonym> {
        self.state
            .read()
            .unwrap()
            .by_identity
            .get(&(source, external_id.to_string()))
            .cloned()
    }

    /// Returns the stored pseudonym, deriving and persisting one on first
    /// sight. The entry is durable before this returns.
    pub fn pseudonymize(
        &self,
        key: &SecretKey,
        source: SourceSystem,
        external_id: &str,
    ) -> Result<Pseudonym, DeidError> {
        if external_id.is_empty() {
            return Err(DeidError::EmptyExternalId);
        }
        if let Some(p) = self.lookup(source, external_id) {
            return Ok(p);
        }
        let _guard = self.writer.lock().unwrap();
        if let Some(p) = self.lookup(source, external_id) {
            return Ok(p);
        }
        let pseudonym = {
            let state = self.state.read().unwrap();
            match state.by_external.get(external_id) {
                Some(p) => p.clone(),
                None => derive_free(key, external_id, &state.holder)?,
            }
        };
        self.persist(VaultRecord::Entry(IdentityVaultEntry {
            source_system: source,
            external_id: external_id.to_string(),
            pseudonym: pseudonym.clone(),
            created_at: Utc::now(),
        }))?;
        Ok(pseudonym)
    }

    /// Inserts an entry exactly as given, e.g. when importing an existing
    /// vault. Refuses anything that would break the uniqueness rules.
    pub fn restore_entry(&self, entry: IdentityVaultEntry) -> Result<(), DeidError> {
        let _guard = self.writer.lock().unwrap();
        {
            let state = self.state.read().unwrap();
            let identity = (entry.source_system, entry.external_id.clone());
            if state.by_identity.contains_key(&identity) {
                return Err(DeidError::VaultConflict(format!(
                    "{}:{} already present",
                    entry.source_system, entry.external_id
                )));
            }
            if let Some(holder) = state.holder.get(&entry.pseudonym) {
                if holder != &entry.external_id {
                    return Err(DeidError::VaultConflict(format!(
                        "{} belongs to another identity",
                        entry.pseudonym
                    )));
                }
            }
        }
        self.persist(VaultRecord::Entry(entry))
    }

    /// Stores name and phone for a pseudonym; unchanged values are not
    /// rewritten.
    pub fn record_attributes(
        &self,
        pseudonym: &Pseudonym,
        full_name: &str,
        phone: &str,
    ) -> Result<(), DeidError> {
        let attrs = IdentityAttributes {
            pseudonym: pseudonym.clone(),
            full_name: full_name.to_string(),
            phone: phone.to_string(),
        };
        let _guard = self.writer.lock().unwrap();
        if self.state.read().unwrap().attributes.get(pseudonym) == Some(&attrs) {
            return Ok(());
        }
        self.persist(VaultRecord::Attributes(attrs))
    }

    pub fn contains_pseudonym(&self, pseudonym: &str) -> bool {
        Pseudonym::from_str(pseudonym)
            .is_ok_and(|p| self.state.read().unwrap().holder.contains_key(&p))
    }

    pub fn attributes(&self, pseudonym: &Pseudonym) -> Option<IdentityAttributes> {
        self.state.read().unwrap().attributes.get(pseudonym).cloned()
    }

    /// External ids linked to `pseudonym`, across all sources.
    pub fn external_ids(&self, pseudonym: &Pseudonym) -> Vec<String> {
        let state = self.state.read().unwrap();
        let mut ids: Vec<String> = state
            .entries
            .iter()
            .filter(|e| &e.pseudonym == pseudonym)
            .map(|e| e.external_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn entries(&self) -> Vec<IdentityVaultEntry> {
        self.state.read().unwrap().entries.clone()
    }

    /// Every identifying string the vault knows: names, phones and
    /// external ids. Used by leak scans.
    pub fn identity_strings(&self) -> Vec<String> {
        let state = self.state.read().unwrap();
        let mut out: Vec<String> = state
            .entries
            .iter()
            .map(|e| e.external_id.clone())
            .chain(
                state
                    .attributes
                    .values()
                    .flat_map(|a| [a.full_name.clone(), a.phone.clone()]),
            )
            .filter(|s| !s.is_empty())
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

fn derive_free(
    key: &SecretKey,
    external_id: &str,
    holder: &HashMap<Pseudonym, String>,
) -> Result<Pseudonym, DeidError> {
    let mac = key.mac(format!("{ANCHOR_SOURCE}:{external_id}").as_bytes());
    for len in [SHORT_HEX, LONG_HEX] {
        let candidate = Pseudonym::derive(&mac, len);
        match holder.get(&candidate) {
            None => return Ok(candidate),
            Some(h) if h == external_id => return Ok(candidate),
            Some(_) => {}
        }
    }
    Err(DeidError::CollisionExhausted {
        external_id: external_id.to_string(),
    })
}

/// The 16-digit pseudonym an identity gets when nothing collides.
pub fn short_pseudonym(key: &SecretKey, external_id: &str) -> Pseudonym {
    Pseudonym::derive(
        &key.mac(format!("{ANCHOR_SOURCE}:{external_id}").as_bytes()),
        SHORT_HEX,
    )
}
