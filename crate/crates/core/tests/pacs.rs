use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use screenforge_core::deid::{DeidPolicy, Deidentifier, SecretKey, SourceSystem};
use screenforge_core::ingest::TOPIC_IMAGING;
use screenforge_core::pacs::{reason, Pacs, PacsError, RouteOutcome, Selector};
use screenforge_dicom::{parse, serialize, tags, Dataset, DicomFile, Element, Vr};
use screenforge_queue::QueueLog;

const QUIET: Duration = Duration::from_secs(5);
const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    deid: Arc<Deidentifier>,
    queue: Arc<QueueLog>,
    pacs: Pacs,
}

fn env() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let (deid, queue, pacs) = open(&root);
    Env {
        _tmp: tmp,
        root,
        deid,
        queue,
        pacs,
    }
}

fn open(root: &Path) -> (Arc<Deidentifier>, Arc<QueueLog>, Pacs) {
    let deid = Arc::new(
        Deidentifier::open(root, SecretKey::new([7; 32]), DeidPolicy::default_policy()).unwrap(),
    );
    let queue = Arc::new(QueueLog::open(root).unwrap());
    let pacs = Pacs::open(root, deid.clone(), queue.clone(), QUIET).unwrap();
    (deid, queue, pacs)
}

fn instance(patient: &str, study: u32, series: u32, sop: u32, date: &str) -> Vec<u8> {
    let mut ds = Dataset::new();
    let uid = |kind: u32, n: u32| format!("1.2.826.0.1.3680043.9.7777.{kind}.{n}");
    ds.put(Element::text(tags::SOP_CLASS_UID, Vr::UI, CT_IMAGE_STORAGE));
    ds.put(Element::text(tags::SOP_INSTANCE_UID, Vr::UI, &uid(3, sop)));
    ds.put(Element::text(tags::STUDY_DATE, Vr::DA, date));
    ds.put(Element::text(tags::MODALITY, Vr::CS, "CT"));
    ds.put(Element::text(tags::PATIENT_NAME, Vr::PN, &format!("Name^{patient}")));
    ds.put(Element::text(tags::PATIENT_ID, Vr::LO, patient));
    ds.put(Element::text(tags::PATIENT_BIRTH_DATE, Vr::DA, "19600101"));
    ds.put(Element::text(tags::STUDY_INSTANCE_UID, Vr::UI, &uid(1, study)));
    ds.put(Element::text(tags::SERIES_INSTANCE_UID, Vr::UI, &uid(2, series)));
    ds.put(Element::text(tags::INSTANCE_NUMBER, Vr::IS, &sop.to_string()));
    serialize(&DicomFile::new(ds)).unwrap()
}

fn stored(outcome: RouteOutcome) -> screenforge_core::pacs::InstanceRef {
    match outcome {
        RouteOutcome::Stored(r) => r,
        other => panic!("expected Stored, got {other:?}"),
    }
}

fn dcm_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = fs::read_dir(dir) {
        for e in rd {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(dcm_files(&p));
            } else if p.extension().is_some_and(|e| e == "dcm") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fresh_instance_is_stored_deidentified_under_remapped_uids() {
    let e = env();
    let r = stored(e.pacs.route(&instance("EXT100", 1, 1, 1, "20240601"), "t").unwrap());
    let study = e.deid.remap_uid("1.2.826.0.1.3680043.9.7777.1.1").unwrap();
    let series = e.deid.remap_uid("1.2.826.0.1.3680043.9.7777.2.1").unwrap();
    let sop = e.deid.remap_uid("1.2.826.0.1.3680043.9.7777.3.1").unwrap();
    assert_eq!((&r.study_uid, &r.series_uid, &r.sop_uid), (&study, &series, &sop));

    let path = e.root.join("pacs").join(&study).join(&series).join(format!("{sop}.dcm"));
    let file = parse(&fs::read(&path).unwrap()).unwrap();
    let p = e.deid.pseudonymize(SourceSystem::Pacs, "EXT100").unwrap();
    assert_eq!(file.dataset.text(tags::PATIENT_NAME).unwrap(), p.as_str());
    assert_eq!(file.dataset.text(tags::PATIENT_ID).unwrap(), p.as_str());
    let bytes = fs::read(&path).unwrap();
    assert!(!bytes.windows(6).any(|w| w == b"EXT100"));
}

#[test]
fn routing_twice_is_a_no_op() {
    let e = env();
    let bytes = instance("EXT100", 1, 1, 1, "20240601");
    let r = stored(e.pacs.route(&bytes, "a").unwrap());
    assert_eq!(e.pacs.route(&bytes, "b").unwrap(), RouteOutcome::Unchanged(r.clone()));
    assert_eq!(dcm_files(&e.root.join("pacs")).len(), 1);
    assert_eq!(e.pacs.study(&r.study_uid).unwrap().instance_count(), 1);
}

#[test]
fn non_dicom_and_compressed_input_is_quarantined() {
    let e = env();
    let out = e.pacs.route(b"definitely not dicom", "junk").unwrap();
    assert_eq!(out, RouteOutcome::Quarantined { reason: reason::NOT_DICOM.into() });
    let jpeg = fs::read(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../dicom/tests/fixtures/jpeg-lossless.dcm"),
    )
    .unwrap();
    let out = e.pacs.route(&jpeg, "jpeg").unwrap();
    assert_eq!(
        out,
        RouteOutcome::Quarantined { reason: reason::UNSUPPORTED_TRANSFER_SYNTAX.into() }
    );
    assert!(dcm_files(&e.root.join("pacs")).is_empty());
    assert!(e.pacs.query(&Selector::All).is_empty());
    let q: Vec<_> = fs::read_dir(e.root.join("pacs-quarantine")).unwrap().collect();
    assert_eq!(q.len(), 4, "payload and record per rejected input");
}

#[test]
fn missing_patient_id_is_refused() {
    let e = env();
    let mut file = parse(&instance("EXT100", 1, 1, 1, "20240601")).unwrap();
    file.dataset.remove(tags::PATIENT_ID);
    let out = e.pacs.route(&serialize(&file).unwrap(), "t").unwrap();
    assert_eq!(out, RouteOutcome::Quarantined { reason: reason::DEID_REFUSED.into() });
    assert!(dcm_files(&e.root.join("pacs")).is_empty());
}

#[test]
fn same_sop_with_different_content_conflicts() {
    let e = env();
    stored(e.pacs.route(&instance("EXT100", 1, 1, 1, "20240601"), "a").unwrap());
    let mut file = parse(&instance("EXT100", 1, 1, 1, "20240601")).unwrap();
    file.dataset.put(Element::text(tags::MODALITY, Vr::CS, "MR"));
    let out = e.pacs.route(&serialize(&file).unwrap(), "b").unwrap();
    assert_eq!(out, RouteOutcome::Quarantined { reason: reason::SOP_CONFLICT.into() });
}

#[test]
fn quiet_period_then_one_study_ready() {
    let e = env();
    let mut study = String::new();
    for sop in 1..=3 {
        study = stored(e.pacs.route(&instance("EXT100", 1, 1, sop, "20240601"), "t").unwrap()).study_uid;
    }
    assert!(e.pacs.tick_at(Instant::now()).unwrap().is_empty(), "still inside quiet period");
    let events = e.pacs.tick_at(Instant::now() + QUIET).unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].instance_count, 3);
    assert_eq!(events[0].study_uid, study);
    assert!(e.pacs.tick_at(Instant::now() + QUIET * 2).unwrap().is_empty());

    // A late instance re-announces the same key with the new count.
    stored(e.pacs.route(&instance("EXT100", 1, 1, 4, "20240601"), "t").unwrap());
    let events = e.pacs.tick_at(Instant::now() + QUIET).unwrap();
    assert_eq!(events[0].instance_count, 4);
    let recs = e.queue.read(TOPIC_IMAGING, 0, 10).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r.key == study.as_bytes()));
}

#[test]
fn no_instances_no_event() {
    let e = env();
    assert!(e.pacs.finalize_study("2.25.1").unwrap().is_none());
    assert!(e.pacs.tick_at(Instant::now() + QUIET).unwrap().is_empty());
}

#[test]
fn unannounced_studies_are_rescheduled_after_restart() {
    let e = env();
    stored(e.pacs.route(&instance("EXT100", 1, 1, 1, "20240601"), "t").unwrap());
    stored(e.pacs.route(&instance("EXT200", 2, 2, 2, "20240602"), "t").unwrap());
    e.pacs.tick_at(Instant::now() + QUIET).unwrap();
    stored(e.pacs.route(&instance("EXT200", 2, 2, 3, "20240602"), "t").unwrap());
    let Env { _tmp, root, deid, queue, pacs } = e;
    drop((pacs, deid, queue));
    let (_d, queue, pacs) = open(&root);
    assert_eq!(pacs.pending_studies(), 1);
    let ev = pacs.tick_at(Instant::now() + QUIET).unwrap();
    assert_eq!(ev.len(), 1);
    assert_eq!(ev[0].instance_count, 2);
    assert_eq!(queue.read(TOPIC_IMAGING, 0, 10).unwrap().len(), 3);
}

#[test]
fn query_by_pseudonym_is_date_ordered() {
    let e = env();
    stored(e.pacs.route(&instance("EXT100", 1, 1, 1, "20240901"), "t").unwrap());
    stored(e.pacs.route(&instance("EXT100", 2, 2, 2, "20230901"), "t").unwrap());
    stored(e.pacs.route(&instance("EXT200", 3, 3, 3, "20220901"), "t").unwrap());
    let p = e.deid.pseudonymize(SourceSystem::Pacs, "EXT100").unwrap();
    let studies = e.pacs.query(&Selector::Pseudonym(p.to_string()));
    assert_eq!(studies.len(), 2);
    assert!(studies[0].study_date < studies[1].study_date);
    // Shifted, but by the same offset for both.
    let span = studies[1].study_date.unwrap() - studies[0].study_date.unwrap();
    assert_eq!(span.num_days(), 366);
    assert!(e.pacs.query(&Selector::Study("2.25.404".into())).is_empty());
    assert_eq!(e.pacs.query(&Selector::All).len(), 3);
}

#[test]
fn retrieve_is_exact_and_read_only() {
    let e = env();
    let r = stored(e.pacs.route(&instance("EXT100", 1, 1, 1, "20240601"), "t").unwrap());
    let path = dcm_files(&e.root.join("pacs")).remove(0);
    let before = (fs::read(&path).unwrap(), fs::metadata(&path).unwrap().modified().unwrap());
    for _ in 0..100 {
        assert_eq!(e.pacs.retrieve(&r.sop_uid).unwrap(), before.0);
    }
    let after = (fs::read(&path).unwrap(), fs::metadata(&path).unwrap().modified().unwrap());
    assert_eq!(before, after);
    assert!(matches!(e.pacs.retrieve("2.25.1"), Err(PacsError::NotFound(_))));
}

#[test]
fn index_survives_restart_and_stale_sidecar() {
    let e = env();
    for (p, study, sop) in [("EXT1", 1, 1), ("EXT1", 1, 2), ("EXT2", 2, 3)] {
        stored(e.pacs.route(&instance(p, study, study, sop, "20240601"), "t").unwrap());
    }
    let before = e.pacs.query(&Selector::All);
    assert_eq!(e.pacs.check_coherence().unwrap(), Ok(()));
    let Env { _tmp, root, deid, queue, pacs } = e;
    drop((pacs, deid, queue));

    let reopened = |root: &Path| {
        let (_d, _q, pacs) = open(root);
        assert_eq!(pacs.check_coherence().unwrap(), Ok(()));
        pacs.query(&Selector::All)
    };
    // Clean restart uses the sidecar.
    assert_eq!(reopened(&root), before);
    // A sidecar from an earlier moment is detected and rebuilt.
    fs::write(root.join("pacs/index.json"), b"{\"instances\":{}}").unwrap();
    assert_eq!(reopened(&root), before);
    // So is a torn sidecar.
    fs::write(root.join("pacs/index.json"), b"{\"inst").unwrap();
    assert_eq!(reopened(&root), before);
}

#[test]
fn routing_order_does_not_matter() {
    let inputs: Vec<Vec<u8>> = (0..6)
        .map(|i| instance(&format!("EXT{}", i % 2), i % 3, i % 3, i, "20240601"))
        .collect();
    let run = |order: &[usize]| {
        let e = env();
        for &i in order {
            e.pacs.route(&inputs[i], "t").unwrap();
            e.pacs.route(&inputs[i], "again").unwrap();
        }
        let tree: Vec<(PathBuf, Vec<u8>)> = dcm_files(&e.root.join("pacs"))
            .into_iter()
            .map(|p| (p.strip_prefix(&e.root).unwrap().to_path_buf(), fs::read(&p).unwrap()))
            .collect();
        let mut studies = e.pacs.query(&Selector::All);
        for s in &mut studies {
            s.stored_at = Default::default();
        }
        assert_eq!(e.pacs.check_coherence().unwrap(), Ok(()));
        (tree, studies)
    };
    let a = run(&[0, 1, 2, 3, 4, 5]);
    let b = run(&[5, 3, 1, 4, 2, 0]);
    assert_eq!(a, b);
    assert_eq!(a.1.len(), 3);
}

#[test]
fn drop_directory_is_polled_and_archived() {
    let e = env();
    fs::write(e.pacs.drop_dir().join("a.dcm"), instance("EXT1", 1, 1, 1, "20240601")).unwrap();
    fs::write(e.pacs.drop_dir().join("b.bin"), b"garbage").unwrap();
    let out = e.pacs.poll_drop().unwrap();
    assert!(matches!(out[0], RouteOutcome::Stored(_)));
    assert!(matches!(out[1], RouteOutcome::Quarantined { .. }));
    assert!(e.pacs.drop_dir().join("done/a.dcm").exists());
    assert!(e.pacs.poll_drop().unwrap().is_empty());
}
