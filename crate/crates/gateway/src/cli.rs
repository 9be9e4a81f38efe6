//! `screenctl` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use screenforge_core::deid::SecretKey;
use screenforge_core::ingest::Source;
use serde::Serialize;

use crate::api::{self, AppState, ExportQuery};
use crate::config::Config;
use crate::services::{PumpReport, Services};
use crate::simulate::{simulate, SimulationSpec};
use crate::verify::verify;

#[derive(Debug, Parser)]
#[command(name = "screenctl", version, about = "Lung cancer screening pipeline operator tool")]
pub struct Cli {
    /// Data directory (default: $SCREENFORGE_DATA_ROOT, then the config file).
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API and the background pipeline worker.
    Serve {
        /// Listen address, overriding the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Generate deterministic synthetic source files.
    Simulate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of participants.
        #[arg(short = 'n', long = "participants", default_value_t = 50)]
        participants: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        ineligible_rate: f64,
        #[arg(long, default_value_t = 0.6)]
        follow_up_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        anomaly_rate: f64,
    },
    /// Load a source tree (crm/, ris/, ehr/, dicom/) and run the pipeline
    /// until it is idle.
    Ingest {
        #[arg(long)]
        from: PathBuf,
    },
    /// Write the research dataset CSV (stdout by default).
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the manifest JSON here.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
    },
    /// Print register statistics as JSON.
    Stats,
    /// Run the integrity suite; exits nonzero on any violation.
    Verify,
}

/// Result of a command: text for stdout and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: Vec<u8>,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: impl Into<Vec<u8>>) -> Self {
        Outcome { stdout: stdout.into(), code: 0 }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    match &cli.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn open_services(cli: &Cli, config: Config) -> anyhow::Result<Services> {
    let root = config.resolve_data_root(cli.data_root.as_deref())?;
    let key = SecretKey::from_env()?;
    Services::open(&root, config, key)
}

fn json_line<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

/// Copies `src` to `dir/name` under a dot-name first so pollers never see
/// a partial file.
fn stage(src: &Path, dir: &Path) -> anyhow::Result<()> {
    let name = src.file_name().context("source file has no name")?;
    let tmp = dir.join(format!(".{}", name.to_string_lossy()));
    fs::copy(src, &tmp).with_context(|| format!("copying {}", src.display()))?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn sorted_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if dir.is_dir() {
        for e in fs::read_dir(dir)? {
            let p = e?.path();
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Stages a source tree into the data root and settles the pipeline.
pub fn ingest_tree(svc: &Services, from: &Path) -> anyhow::Result<PumpReport> {
    if !from.is_dir() {
        anyhow::bail!("{} is not a directory", from.display());
    }
    for source in Source::ALL {
        let inbox = svc.ingest.inbox(source);
        for f in sorted_files(&from.join(source.slug()))? {
            stage(&f, &inbox)?;
        }
    }
    for f in sorted_files(&from.join("dicom"))? {
        stage(&f, &svc.pacs.drop_dir())?;
    }
    svc.settle()
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match &cli.command {
        Command::Serve { bind } => {
            let mut config = load_config(&cli)?;
            if let Some(b) = bind {
                config.server.bind = b.clone();
            }
            let tokens = config.tokens();
            let addr = config.server.bind.clone();
            let svc = Arc::new(open_services(&cli, config)?);
            let state = AppState::new(svc, tokens)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                tracing::info!(%addr, "serving /api/v1");
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                    tracing::info!("shutting down");
                };
                api::serve(state, listener, shutdown).await
            })?;
            Ok(Outcome::ok(Vec::new()))
        }
        Command::Simulate {
            seed,
            participants,
            out,
            ineligible_rate,
            follow_up_rate,
            anomaly_rate,
        } => {
            let spec = SimulationSpec {
                seed: *seed,
                participants: *participants,
                ineligible_rate: *ineligible_rate,
                follow_up_rate: *follow_up_rate,
                anomaly_rate: *anomaly_rate,
                ..SimulationSpec::default()
            };
            let ledger = simulate(&spec, out)?;
            Ok(Outcome::ok(format!(
                "generated {} participants and {} studies in {}\n",
                ledger.participants.len(),
                ledger.study_count(),
                out.display()
            )))
        }
        Command::Ingest { from } => {
            let svc = open_services(&cli, load_config(&cli)?)?;
            let report = ingest_tree(&svc, from)?;
            Ok(Outcome::ok(json_line(&report)))
        }
        Command::Export {
            out,
            manifest,
            state,
            from,
            to,
        } => {
            let svc = open_services(&cli, load_config(&cli)?)?;
            let query = ExportQuery {
                state: state.clone(),
                from: *from,
                to: *to,
            };
            let filter = query.filter().map_err(anyhow::Error::msg)?;
            let ex = svc.registry.export(&filter);
            if let Some(m) = manifest {
                fs::write(m, ex.manifest_json()).with_context(|| format!("writing {}", m.display()))?;
            }
            match out {
                Some(p) => {
                    fs::write(p, &ex.csv).with_context(|| format!("writing {}", p.display()))?;
                    Ok(Outcome::ok(format!("{} rows written to {}\n", ex.rows.len(), p.display())))
                }
                None => Ok(Outcome::ok(ex.csv)),
            }
        }
        Command::Stats => {
            let svc = open_services(&cli, load_config(&cli)?)?;
            Ok(Outcome::ok(json_line(&svc.registry.stats())))
        }
        Command::Verify => {
            let config = load_config(&cli)?;
            let root = config.resolve_data_root(cli.data_root.as_deref())?;
            let report = verify(&root);
            Ok(Outcome {
                stdout: report.render().into_bytes(),
                code: if report.ok() { 0 } else { 1 },
            })
        }
    }
}

/// Entry point shared by the binary: prints output, maps errors to exit 1.
pub fn main_with(cli: Cli) -> i32 {
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(&out.stdout);
            let _ = stdout.flush();
            out.code
        }
        Err(e) => {
            eprintln!("screenctl: {e:#}");
            1
        }
    }
}
