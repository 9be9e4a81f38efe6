//! Depersonalization: keyed pseudonyms backed by an identity vault, DICOM
//! tag scrubbing, UID remapping, per-patient date shifting and free-text
//! redaction.
//!
//! Every derivation is HMAC-SHA256 under one secret key, so re-ingesting
//! the same source data reproduces the same pseudonyms, UIDs and offsets.

mod dicom;
mod key;
mod policy;
mod text;
mod vault;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use screenforge_dicom::DicomError;
use screenforge_queue::QueueError;
use thiserror::Error;

pub use dicom::{AuditEntry, DeidAudit};
pub use key::{SecretKey, KEY_ENV};
pub use policy::{Action, DeidPolicy, TextAction, DEFAULT_POLICY};
pub use text::{
    needles_for, redact, shift_text_date, Needle, IDENTITY_FIELD, MARKER_FIELD, PSEUDONYM_FIELD,
    REDACTED,
};
pub use vault::{
    short_pseudonym, IdentityAttributes, IdentityVaultEntry, Pseudonym, SourceSystem, Vault,
    ANCHOR_SOURCE, LONG_HEX, SHORT_HEX,
};

#[derive(Debug, Error)]
pub enum DeidError {
    #[error("SCREENFORGE_DEID_KEY is not set; refusing to run without a de-identification key")]
    MissingKey,
    #[error("de-identification key must be 64 hex characters")]
    InvalidKey,
    #[error("external id is empty")]
    EmptyExternalId,
    #[error("pseudonym collision for external id at both 16 and 24 hex digits")]
    CollisionExhausted { external_id: String },
    #[error("malformed UID {0:?}")]
    MalformedUid(String),
    #[error("UID remap collision: two inputs map to {0}")]
    UidCollision(String),
    #[error("invalid pseudonym {0:?}")]
    InvalidPseudonym(String),
    #[error("de-identification refused: {0}")]
    DeidRefused(String),
    #[error("policy line {line}: {reason}")]
    InvalidPolicy { line: usize, reason: String },
    #[error("vault conflict: {0}")]
    VaultConflict(String),
    #[error("vault record unreadable: {0}")]
    VaultFormat(String),
    #[error(transparent)]
    Vault(#[from] QueueError),
    #[error(transparent)]
    Dicom(#[from] DicomError),
}

impl DeidError {
    /// Leaves out values that could identify someone (the collision error
    /// carries an external id for the caller, not for logs).
    pub fn public_message(&self) -> String {
        match self {
            DeidError::CollisionExhausted { .. } => "pseudonym collision exhausted".into(),
            other => other.to_string(),
        }
    }
}

/// Key, vault and policy bundled for the pipeline.
pub struct Deidentifier {
    key: SecretKey,
    vault: Vault,
    policy: DeidPolicy,
    uids: Mutex<HashMap<String, String>>,
}

pub const UID_ROOT: &str = "2.25.";
const UID_DIGITS: usize = 38;

impl Deidentifier {
    pub fn new(key: SecretKey, vault: Vault, policy: DeidPolicy) -> Self {
        Deidentifier {
            key,
            vault,
            policy,
            uids: Mutex::new(HashMap::new()),
        }
    }

    /// Opens the vault at `<data_root>/vault/`.
    pub fn open(data_root: &Path, key: SecretKey, policy: DeidPolicy) -> Result<Self, DeidError> {
        Ok(Self::new(key, Vault::open(&data_root.join("vault"))?, policy))
    }

    pub fn vault(&self) -> &Vault {
        &self.vault
    }

    pub fn policy(&self) -> &DeidPolicy {
        &self.policy
    }

    pub fn pseudonymize(&self, source: SourceSystem, external_id: &str) -> Result<Pseudonym, DeidError> {
        self.vault.pseudonymize(&self.key, source, external_id)
    }

    /// `2.25.` followed by the first 38 decimal digits of the MAC read as an
    /// unsigned big-endian integer.
    pub fn remap_uid(&self, uid: &str) -> Result<String, DeidError> {
        if !is_valid_uid(uid) {
            return Err(DeidError::MalformedUid(uid.to_string()));
        }
        let digits = key::decimal_digits(&self.key.mac(uid.as_bytes()));
        let out = format!("{UID_ROOT}{}", &digits[..digits.len().min(UID_DIGITS)]);
        let mut seen = self.uids.lock().unwrap();
        match seen.get(&out) {
            Some(prev) if prev != uid => return Err(DeidError::UidCollision(out)),
            Some(_) => {}
            None => {
                seen.insert(out.clone(), uid.to_string());
            }
        }
        Ok(out)
    }

    /// Days in `[-30, 30]`: MAC of `<pseudonym>:dateshift` read as an
    /// unsigned big-endian integer, mod 61, minus 30.
    pub fn date_shift_offset(&self, pseudonym: &Pseudonym) -> i64 {
        date_shift_offset(&self.key, pseudonym)
    }

    pub fn key_fingerprint(&self) -> String {
        self.key.fingerprint()
    }
}

pub fn date_shift_offset(key: &SecretKey, pseudonym: &Pseudonym) -> i64 {
    let mac = key.mac(format!("{pseudonym}:dateshift").as_bytes());
    key::modulo(&mac, 61) as i64 - 30
}

/// Digits and dots, at most 64 characters, no empty component.
pub fn is_valid_uid(uid: &str) -> bool {
    !uid.is_empty()
        && uid.len() <= 64
        && uid
            .split('.')
            .all(|c| !c.is_empty() && c.bytes().all(|b| b.is_ascii_digit()))
}
