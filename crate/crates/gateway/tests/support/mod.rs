//! Shared harness: an in-process server on an ephemeral port, a prepared
//! data root and a report-driven labeler.
#![allow(dead_code)]

use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use reqwest::blocking::{Client, RequestBuilder, Response};
use screenforge_core::deid::SecretKey;
use screenforge_gateway::api::{self, AppState};
use screenforge_gateway::cli::ingest_tree;
use screenforge_gateway::config::{Config, Role, TokenEntry};
use screenforge_gateway::services::{PumpReport, Services};
use screenforge_gateway::simulate::{diameter_from_report, simulate, Ledger, SimulationSpec};
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub const READER_TOKEN: &str = "reader-token-0001";
pub const EXPERT_TOKEN: &str = "expert-token-0001";
pub const KEY_HEX: &str = "5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a";

pub fn key() -> SecretKey {
    SecretKey::from_hex(KEY_HEX).unwrap()
}

pub fn tokens() -> Vec<TokenEntry> {
    vec![
        TokenEntry {
            token: READER_TOKEN.into(),
            role: Role::Reader,
            user: "READER-1".into(),
        },
        TokenEntry {
            token: EXPERT_TOKEN.into(),
            role: Role::Expert,
            user: "EXPERT-1".into(),
        },
    ]
}

pub fn config() -> Config {
    let mut c = Config::default();
    c.server.poll_interval_ms = 50;
    c.pacs.quiet_period_secs = 0.2;
    c
}

pub fn open(root: &Path) -> Services {
    Services::open(root, config(), key()).unwrap()
}

/// Simulates `spec` into `<root>/../sim-<seed>` and ingests it into `root`.
pub fn prepare(root: &Path, spec: &SimulationSpec) -> (Ledger, PumpReport) {
    let sim = root.with_file_name(format!("sim-{}", spec.seed));
    let ledger = simulate(spec, &sim).unwrap();
    let svc = open(root);
    let report = ingest_tree(&svc, &sim).unwrap();
    (ledger, report)
}

pub fn small_spec(seed: u64, participants: usize) -> SimulationSpec {
    SimulationSpec {
        seed,
        participants,
        ineligible_rate: 0.0,
        follow_up_rate: 0.0,
        anomaly_rate: 0.0,
        ..SimulationSpec::default()
    }
}

pub struct Server {
    pub base: String,
    pub svc: Arc<Services>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
    client: Client,
}

impl Server {
    pub fn start(root: &Path) -> Server {
        let svc = Arc::new(open(root));
        let state = AppState::new(svc.clone(), tokens()).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}/api/v1", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                api::serve(state, listener, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            });
        });
        Server {
            base,
            svc,
            stop: Some(tx),
            thread: Some(thread),
            client: Client::new(),
        }
    }

    /// Shuts the server down and waits until it has released the data root.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Response {
        self.send(self.client.get(format!("{}{path}", self.base)), token)
    }

    pub fn post_json(&self, path: &str, token: &str, body: &Value) -> Response {
        self.send(self.client.post(format!("{}{path}", self.base)).json(body), Some(token))
    }

    pub fn post(&self, path: &str, token: &str) -> RequestBuilder {
        self.client
            .post(format!("{}{path}", self.base))
            .bearer_auth(token)
    }

    fn send(&self, req: RequestBuilder, token: Option<&str>) -> Response {
        let req = match token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        req.send().unwrap()
    }

    pub fn json(&self, path: &str) -> Value {
        let r = self.get(path, Some(READER_TOKEN));
        assert!(r.status().is_success(), "GET {path}: {}", r.status());
        r.json().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Nodule read back from a simulated report: lobe, composition, diameter.
pub fn nodule_from_report(text: &str) -> Option<Value> {
    let d = diameter_from_report(text)?;
    let rest = &text[text.find("Nodule in ")? + "Nodule in ".len()..];
    let mut parts = rest.split(',').map(str::trim);
    let lobe = parts.next()?;
    let composition = parts.next()?.replace('-', "_").to_uppercase();
    Some(json!({"lobe": lobe, "composition": composition, "mean_diameter_mm": d}))
}

pub fn category_for(diameter: Option<f64>) -> &'static str {
    match diameter {
        None => "1",
        Some(d) if d < 6.0 => "2",
        Some(d) if d < 8.0 => "3",
        Some(d) if d < 15.0 => "4A",
        Some(_) => "4B",
    }
}

/// What one labeling pass did.
#[derive(Debug, Default)]
pub struct LabelReport {
    pub read: usize,
    pub second_opinions: usize,
    pub finalized: usize,
}

/// Reads every study on the worklist the way a reader would: takes the
/// RIS report dated like the study from the participant timeline, derives
/// the category from the reported diameter, asks the expert for 4A/4B and
/// finalizes.
pub fn label_worklist(server: &Server) -> LabelReport {
    let mut report = LabelReport::default();
    let worklist = server.json("/worklist");
    for item in worklist.as_array().unwrap() {
        if item["state"] != "AWAITING_READ" {
            continue;
        }
        let study = item["study_uid"].as_str().unwrap();
        let pseudonym = item["pseudonym"].as_str().unwrap();
        let timeline = server.json(&format!("/participants/{pseudonym}/timeline"));
        let entries = timeline.as_array().unwrap();
        let imaged_at = entries
            .iter()
            .find(|e| e["detail"]["study_uid"] == study)
            .map(|e| e["at"].clone())
            .expect("study on timeline");
        let text = entries
            .iter()
            .find(|e| e["at"] == imaged_at && e["detail"]["report_text"].is_string())
            .and_then(|e| e["detail"]["report_text"].as_str())
            .unwrap_or("");
        let nodule = nodule_from_report(text);
        let category = category_for(nodule.as_ref().and_then(|n| n["mean_diameter_mm"].as_f64()));
        let nodules: Vec<Value> = nodule.into_iter().collect();
        let body = json!({"nodules": nodules, "category": category});
        let r = server.post_json(&format!("/studies/{study}/protocol"), READER_TOKEN, &body);
        assert_eq!(r.status().as_u16(), 201, "protocol for {study}: {}", r.text().unwrap());
        report.read += 1;
        if matches!(category, "4A" | "4B") {
            let r = server.post_json(
                &format!("/studies/{study}/second-opinion"),
                READER_TOKEN,
                &json!({"expert_id": "EXPERT-1"}),
            );
            assert!(r.status().is_success(), "second opinion request: {}", r.text().unwrap());
            let r = server.post_json(&format!("/studies/{study}/second-opinion/protocol"), EXPERT_TOKEN, &body);
            assert_eq!(r.status().as_u16(), 201, "expert protocol: {}", r.text().unwrap());
            report.second_opinions += 1;
        }
        let r = server.post(&format!("/studies/{study}/finalize"), READER_TOKEN).send().unwrap();
        assert!(r.status().is_success(), "finalize {study}: {}", r.text().unwrap());
        report.finalized += 1;
    }
    report
}

/// Labels until the worklist has nothing awaiting a read; follow-up
/// studies become readable once the earlier round is finalized.
pub fn label_all(server: &Server) -> LabelReport {
    let mut total = LabelReport::default();
    loop {
        let r = label_worklist(server);
        if r.read == 0 {
            return total;
        }
        total.read += r.read;
        total.second_opinions += r.second_opinions;
        total.finalized += r.finalized;
    }
}

/// Polls until `f` holds or the deadline passes.
pub fn wait_for(secs: u64, mut f: impl FnMut() -> bool) -> bool {
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(secs);
    while std::time::Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(std::time::Duration::from_millis(25));
    }
    f()
}
