//! Service configuration, read from a TOML file. Every key is optional;
//! `screenctl.example.toml` at the repository root lists them all.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use screenforge_core::ingest::EligibilityRules;
use screenforge_core::registry::RegistryConfig;
use serde::{Deserialize, Serialize};

pub const DATA_ROOT_ENV: &str = "SCREENFORGE_DATA_ROOT";
pub const API_TOKEN_ENV: &str = "SCREENFORGE_API_TOKEN";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_root: Option<PathBuf>,
    pub server: ServerConfig,
    pub pacs: PacsConfig,
    pub registry: RegistryConfig,
    pub eligibility: EligibilityRules,
    pub deid: DeidConfig,
    pub auth: AuthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Interval of the background worker that polls inboxes, the PACS drop
    /// directory and the queue.
    pub poll_interval_ms: u64,
    pub idempotency_ttl_hours: u64,
    /// When set, READ_DONE studies whose final protocol is older than this
    /// are finalized by the worker. Unset means finalization is explicit.
    pub auto_finalize_after_secs: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            poll_interval_ms: 1000,
            idempotency_ttl_hours: 24,
            auto_finalize_after_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacsConfig {
    pub quiet_period_secs: f64,
}

impl Default for PacsConfig {
    fn default() -> Self {
        PacsConfig { quiet_period_secs: 5.0 }
    }
}

impl PacsConfig {
    pub fn quiet_period(&self) -> Duration {
        Duration::from_secs_f64(self.quiet_period_secs.max(0.0))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeidConfig {
    /// Policy file replacing the built-in tag and field rules.
    pub policy_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reader,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenEntry {
    pub token: String,
    pub role: Role,
    /// Reader or expert id recorded on protocols submitted with this token
    /// when the request does not name one.
    pub user: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub tokens: Vec<TokenEntry>,
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Command line beats the environment, which beats the file.
    pub fn resolve_data_root(&self, flag: Option<&Path>) -> anyhow::Result<PathBuf> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        if let Some(p) = std::env::var_os(DATA_ROOT_ENV) {
            return Ok(PathBuf::from(p));
        }
        self.data_root
            .clone()
            .ok_or_else(|| anyhow::anyhow!("no data root: pass --data-root or set {DATA_ROOT_ENV}"))
    }

    /// Tokens from the file plus the shared reader token from the
    /// environment.
    pub fn tokens(&self) -> Vec<TokenEntry> {
        let mut out = self.auth.tokens.clone();
        if let Ok(t) = std::env::var(API_TOKEN_ENV) {
            if !t.is_empty() {
                out.push(TokenEntry {
                    token: t,
                    role: Role::Reader,
                    user: "reader".into(),
                });
            }
        }
        out
    }
}
