mod support;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use screenforge_core::registry::ExportFilter;
use screenforge_gateway::simulate::{plan, Ledger, SimulationSpec};
use support::*;

fn screenctl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_screenctl"))
        .arg("--data-root")
        .arg(root)
        .args(args)
        .env("SCREENFORGE_DEID_KEY", KEY_HEX)
        .env_remove("SCREENFORGE_DATA_ROOT")
        .env_remove("SCREENFORGE_API_TOKEN")
        .output()
        .unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn commands_refuse_to_run_without_a_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_screenctl"))
        .arg("--data-root")
        .arg(tmp.path())
        .arg("stats")
        .env_remove("SCREENFORGE_DEID_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SCREENFORGE_DEID_KEY"));
    assert!(!tmp.path().join("vault").exists());
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "42"), (&b, "42"), (&c, "43")] {
        let out = screenctl(tmp.path(), &["simulate", "--seed", seed, "-n", "12", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
    let ledger = Ledger::load(&a).unwrap();
    assert_eq!(ledger.participants.len(), 12);
    assert_eq!(
        ledger,
        plan(&SimulationSpec {
            participants: 12,
            ..SimulationSpec::default()
        })
    );
}

#[test]
fn simulated_cohort_has_the_requested_shape() {
    let ledger = plan(&SimulationSpec::default());
    assert_eq!(ledger.participants.len(), 50);
    assert!(ledger.study_count() >= 60, "{} studies", ledger.study_count());
    let ineligible = ledger.participants.iter().filter(|p| !p.eligible).count();
    assert_eq!(ineligible, 10);
    assert!(ledger.participants.iter().filter(|p| !p.eligible).all(|p| p.studies.is_empty()));
    let anomalies = ledger.participants.iter().filter(|p| p.anomaly).count();
    assert!(anomalies >= 1);
    let mut ids: Vec<&str> = ledger.participants.iter().map(|p| p.external_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 50);
}

#[test]
fn no_anomalies_means_no_outlier_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    let spec = SimulationSpec {
        seed: 5,
        participants: 10,
        anomaly_rate: 0.0,
        ..SimulationSpec::default()
    };
    let (ledger, _) = prepare(&root, &spec);
    assert!(ledger.participants.iter().all(|p| !p.anomaly));
    let server = Server::start(&root);
    label_all(&server);
    let ex = server.svc.registry.export(&ExportFilter::default());
    assert_eq!(ex.rows.len(), ledger.study_count());
    assert!(ex.rows.iter().any(|r| r.max_nodule_diameter_mm.is_some()));
    assert_eq!(ex.rows.iter().filter(|r| r.outlier_flag).count(), 0);
}

#[test]
fn anomalous_nodules_are_flagged_but_kept() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    let spec = SimulationSpec {
        seed: 8,
        participants: 20,
        anomaly_rate: 0.15,
        ..SimulationSpec::default()
    };
    let (ledger, _) = prepare(&root, &spec);
    let server = Server::start(&root);
    label_all(&server);
    let ex = server.svc.registry.export(&ExportFilter::default());
    assert_eq!(ex.rows.len(), ledger.study_count());
    let anomalies = ledger.participants.iter().filter(|p| p.anomaly).count();
    assert!(anomalies > 0);
    let flagged: Vec<f64> = ex.rows.iter().filter(|r| r.outlier_flag).filter_map(|r| r.max_nodule_diameter_mm).collect();
    assert_eq!(flagged.len(), anomalies);
    assert!(flagged.iter().all(|d| *d >= 60.0));
}

#[test]
fn ingest_export_and_verify_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    let sim = tmp.path().join("sim");
    let out = screenctl(&root, &["simulate", "--seed", "21", "-n", "8", "--out", sim.to_str().unwrap()]);
    assert!(out.status.success());
    let out = screenctl(&root, &["ingest", "--from", sim.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["files_ingested"], 5);

    // Label over HTTP, then compare the CLI export with GET /export.
    let server = Server::start(&root);
    let labels = label_all(&server);
    assert!(labels.finalized > 0);
    let http_csv = server.get("/export", Some(READER_TOKEN)).bytes().unwrap().to_vec();
    server.stop();

    let csv_path = tmp.path().join("export.csv");
    let manifest_path = tmp.path().join("manifest.json");
    let out = screenctl(
        &root,
        &["export", "--out", csv_path.to_str().unwrap(), "--manifest", manifest_path.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(&csv_path).unwrap(), http_csv);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["row_count"].as_u64().unwrap() as usize, labels.finalized);
    let stdout_csv = screenctl(&root, &["export"]).stdout;
    assert_eq!(stdout_csv, http_csv);

    let stats = screenctl(&root, &["stats"]);
    let stats: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(stats["finalized_studies"].as_u64().unwrap() as usize, labels.finalized);

    let out = screenctl(&root, &["verify"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.matches("[PASS]").count(), 4, "{text}");
}

#[test]
fn verify_fails_on_a_damaged_queue_segment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    prepare(&root, &small_spec(12, 4));
    assert_eq!(screenctl(&root, &["verify"]).status.code(), Some(0));

    let seg = root.join("queue/participants/segment-0.log");
    let mut bytes = fs::read(&seg).unwrap();
    assert!(bytes.len() > 200);
    bytes[40] ^= 0xFF;
    fs::write(&seg, bytes).unwrap();
    let out = screenctl(&root, &["verify"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(out.status.code(), Some(1), "{text}");
    assert!(text.contains("[FAIL] queue") && text.contains("participants"), "{text}");
}

#[test]
fn verify_fails_when_an_identity_reaches_the_store() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    let (ledger, _) = prepare(&root, &small_spec(13, 2));
    let name = &ledger.participants[0].full_name;
    fs::write(root.join("pacs").join("stray.txt"), format!("note about {name}")).unwrap();
    let out = screenctl(&root, &["verify"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(out.status.code(), Some(1), "{text}");
    assert!(text.contains("[FAIL] leak-scan"), "{text}");
    assert!(!text.contains(name.as_str()), "report must not repeat the value");
}

#[test]
fn ingest_is_idempotent_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    let sim = tmp.path().join("sim");
    screenctl(&root, &["simulate", "--seed", "14", "-n", "5", "--out", sim.to_str().unwrap()]);
    assert!(screenctl(&root, &["ingest", "--from", sim.to_str().unwrap()]).status.success());
    let stats_once = screenctl(&root, &["stats"]).stdout;
    let out = screenctl(&root, &["ingest", "--from", sim.to_str().unwrap()]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["records_published"], 0);
    assert_eq!(report["register_applied"], 0);
    assert_eq!(screenctl(&root, &["stats"]).stdout, stats_once);
}


