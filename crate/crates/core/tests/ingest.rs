use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDate, TimeZone, Utc};
use screenforge_core::deid::{DeidPolicy, Deidentifier, SecretKey};
use screenforge_core::ingest::*;
use screenforge_queue::QueueLog;
use serde_json::Value;

fn formats_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/formats")
}

fn fixture(name: &str) -> Vec<u8> {
    fs::read(formats_dir().join(name)).unwrap()
}

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    queue: Arc<QueueLog>,
    pipeline: IngestPipeline,
}

fn env() -> Env {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let (queue, pipeline) = open(&root);
    Env {
        _tmp: tmp,
        root,
        queue,
        pipeline,
    }
}

fn open(root: &Path) -> (Arc<QueueLog>, IngestPipeline) {
    let queue = Arc::new(QueueLog::open(root).unwrap());
    let deid = Arc::new(
        Deidentifier::open(root, SecretKey::new([0; 32]), DeidPolicy::default_policy()).unwrap(),
    );
    let pipeline =
        IngestPipeline::new(root, queue.clone(), deid, EligibilityRules::default()).unwrap();
    (queue, pipeline)
}

fn drain(queue: &QueueLog, topic: &str) -> Vec<(String, Value)> {
    match queue.read(topic, 0, usize::MAX) {
        Ok(recs) => recs
            .into_iter()
            .map(|r| {
                (
                    String::from_utf8(r.key).unwrap(),
                    serde_json::from_slice(&r.payload).unwrap(),
                )
            })
            .collect(),
        Err(_) => Vec::new(),
    }
}

fn quarantine_reasons(root: &Path) -> Vec<String> {
    let dir = root.join("quarantine");
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<String> = entries
        .map(|e| {
            let v: Value = serde_json::from_slice(&fs::read(e.unwrap().path()).unwrap()).unwrap();
            v["reason"].as_str().unwrap().to_string()
        })
        .collect();
    out.sort();
    out
}

fn raw(source: Source, format: Format, payload: &[u8]) -> RawSourceRecord {
    RawSourceRecord {
        source,
        format,
        origin: "test".into(),
        payload: payload.to_vec(),
        received_at: Utc::now(),
    }
}

fn split_one(source: Source, format: Format, bytes: &[u8]) -> Vec<RawSourceRecord> {
    split(source, format, "test", bytes, Utc::now()).unwrap()
}

#[test]
fn crm_row_maps_to_canonical_participant() {
    let rows = split_one(
        Source::Crm,
        Format::Csv,
        b"1007,Doe^Jane,1962-03-05,F,+79000000000,30,0,Y,2024-05-01T10:00:00Z\n",
    );
    assert_eq!(rows.len(), 1);
    let p = harmonize_participant(&rows[0]).unwrap();
    assert_eq!(p.source_external_id, "1007");
    assert_eq!(p.full_name, "Doe^Jane");
    assert_eq!(p.birth_date, NaiveDate::from_ymd_opt(1962, 3, 5).unwrap());
    assert_eq!(p.sex, Sex::F);
    assert_eq!(p.smoking_pack_years, 30.0);
    assert_eq!(p.years_since_quit, YearsSinceQuit::Years(0.0));
    assert!(p.consent);
    assert_eq!(
        p.registered_at,
        Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap()
    );
}

#[test]
fn consent_absent_quarantines() {
    let rows = split_one(
        Source::Crm,
        Format::Csv,
        b"1007,Doe^Jane,1962-03-05,F,+79000000000,30,0,N,2024-05-01T10:00:00Z\n",
    );
    assert_eq!(
        harmonize_participant(&rows[0]).unwrap_err(),
        reason::CONSENT_ABSENT
    );
}

#[test]
fn alternate_birth_date_formats() {
    let rows = split_one(Source::Crm, Format::Csv, &fixture("crm-register.csv"));
    assert_eq!(rows.len(), 7);
    let dates: Vec<Result<NaiveDate, String>> = rows
        .iter()
        .map(|r| harmonize_participant(r).map(|p| p.birth_date))
        .collect();
    assert_eq!(dates[1], Ok(NaiveDate::from_ymd_opt(1962, 3, 5).unwrap()));
    assert_eq!(dates[2], Ok(NaiveDate::from_ymd_opt(1958, 11, 17).unwrap()));
    assert_eq!(dates[5], Err(reason::invalid("birth_date")));
}

#[test]
fn outlier_pack_years_are_retained() {
    let rows = split_one(Source::Crm, Format::Csv, &fixture("crm-register.csv"));
    let p = harmonize_participant(&rows[3]).unwrap();
    assert_eq!(p.smoking_pack_years, 300.0);
    let decimal = harmonize_participant(&rows[2]).unwrap();
    assert_eq!(decimal.smoking_pack_years, 22.5);
}

#[test]
fn malformed_rows_name_the_field() {
    let cases: [(&[u8], String); 4] = [
        (b"1007,Doe^Jane,1962-03-05,F,+7,-1,0,Y,2024-05-01\n", reason::invalid("pack_years")),
        (b"1007,Doe^Jane,1962-03-05,X,+7,30,0,Y,2024-05-01\n", reason::invalid("sex")),
        (b",Doe^Jane,1962-03-05,F,+7,30,0,Y,2024-05-01\n", reason::missing("external_id")),
        (b"1007,Doe^Jane,2030-03-05,F,+7,30,0,Y,2024-05-01\n", reason::invalid("birth_date")),
    ];
    for (row, want) in cases {
        let rows = split_one(Source::Crm, Format::Csv, row);
        assert_eq!(harmonize_participant(&rows[0]).unwrap_err(), want);
    }
}

#[test]
fn eligibility_examples() {
    let as_of = NaiveDate::from_ymd_opt(2024, 5, 1).unwrap();
    let rules = EligibilityRules::default();
    let mut p = CanonicalParticipant {
        source_external_id: "1".into(),
        full_name: "A^B".into(),
        birth_date: NaiveDate::from_ymd_opt(1964, 1, 1).unwrap(),
        sex: Sex::F,
        phone: String::new(),
        smoking_pack_years: 30.0,
        years_since_quit: YearsSinceQuit::Current,
        consent: true,
        registered_at: Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, 0).unwrap(),
    };
    let r = check_eligibility(&p, &rules, as_of);
    assert!(r.eligible && r.reasons.is_empty());

    p.birth_date = NaiveDate::from_ymd_opt(1979, 1, 1).unwrap();
    assert_eq!(check_eligibility(&p, &rules, as_of).reasons, ["AGE_RANGE"]);

    p.birth_date = NaiveDate::from_ymd_opt(1974, 5, 1).unwrap();
    assert!(check_eligibility(&p, &rules, as_of).eligible);

    p.birth_date = NaiveDate::from_ymd_opt(1990, 1, 1).unwrap();
    p.smoking_pack_years = 5.0;
    p.years_since_quit = YearsSinceQuit::Years(20.0);
    let r = check_eligibility(&p, &rules, as_of);
    assert!(!r.eligible);
    assert_eq!(r.reasons, ["AGE_RANGE", "PACK_YEARS", "YEARS_SINCE_QUIT"]);
}

#[test]
fn ris_csv_and_txt_are_equivalent() {
    let csv: Vec<_> = split_one(Source::Ris, Format::Csv, &fixture("ris-protocols.csv"))
        .iter()
        .map(|r| harmonize_ris(r).unwrap())
        .collect();
    let txt: Vec<_> = split_one(Source::Ris, Format::Txt, &fixture("ris-protocols.txt"))
        .iter()
        .map(|r| harmonize_ris(r).unwrap())
        .collect();
    assert_eq!(csv.len(), 2);
    assert_eq!(csv, txt);
    assert_eq!(txt[1].report_text, "No nodules.\nLung-RADS 1.");
}

#[test]
fn ris_txt_block_from_example() {
    let block = b"ACCESSION: A-1\nPATIENT: 1007\nMODALITY: CT\nDATE: 2024-06-01\nREPORT: ...";
    let r = harmonize_ris(&raw(Source::Ris, Format::Txt, block)).unwrap();
    assert_eq!(r.accession, "A-1");
    assert_eq!(r.source_external_id, "1007");
    assert_eq!(r.study_date, NaiveDate::from_ymd_opt(2024, 6, 1).unwrap());
    assert_eq!(
        harmonize_ris(&raw(Source::Ris, Format::Txt, b"PATIENT: 1007\nDATE: 2024-06-01"))
            .unwrap_err(),
        reason::missing("accession")
    );
}

#[test]
fn ehr_json_and_xml_are_equivalent() {
    let json = harmonize_ehr(&raw(Source::Ehr, Format::Json, &fixture("ehr-extract.json"))).unwrap();
    let xml = harmonize_ehr(&raw(Source::Ehr, Format::Xml, &fixture("ehr-extract.xml"))).unwrap();
    assert_eq!(json.len(), 3);
    assert_eq!(json, xml);
    let kinds: Vec<ClinicalKind> = json.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [ClinicalKind::Diagnosis, ClinicalKind::Diagnosis, ClinicalKind::Vitals]
    );
    assert!(harmonize_ehr(&raw(Source::Ehr, Format::Json, b"[]"))
        .unwrap()
        .is_empty());
    assert_eq!(
        harmonize_ehr(&raw(Source::Ehr, Format::Json, b"{\"patient_id\": ")).unwrap_err(),
        reason::UNDECODABLE
    );
}

#[test]
fn empty_inbox_yields_nothing() {
    let e = env();
    assert!(e.pipeline.poll_all().unwrap().is_empty());
}

#[test]
fn pipeline_routes_each_source_to_its_topic() {
    let e = env();
    for (src, name) in [
        (Source::Crm, "crm-register.csv"),
        (Source::Ris, "ris-protocols.csv"),
        (Source::Ehr, "ehr-extract.json"),
    ] {
        fs::write(e.pipeline.inbox(src).join(name), fixture(name)).unwrap();
    }
    let reports = e.pipeline.poll_all().unwrap();
    assert_eq!(reports.len(), 3);

    let participants = drain(&e.queue, TOPIC_PARTICIPANTS);
    let ris = drain(&e.queue, TOPIC_RIS);
    let ehr = drain(&e.queue, TOPIC_EHR);
    assert_eq!(participants.len(), 4);
    assert_eq!(ris.len(), 2);
    assert_eq!(ehr.len(), 3);
    for (key, v) in participants.iter() {
        assert_eq!(v["pseudonym"].as_str().unwrap(), key);
        assert!(v.get("smoking_pack_years").is_some());
        assert!(v.get("eligibility").is_some());
        assert!(v.get("full_name").is_none() && v.get("phone").is_none());
    }
    assert!(ris.iter().all(|(_, v)| v.get("report_text").is_some()));
    assert!(ris.iter().all(|(_, v)| v.get("accession").is_none()));
    assert!(ehr.iter().all(|(_, v)| v.get("kind").is_some()));

    // CRM 1007 appears in all three feeds and links to one pseudonym.
    let p1007 = &participants[0].0;
    assert_eq!(&ris[0].0, p1007);
    assert!(ehr.iter().all(|(k, _)| k == p1007));

    // Files were archived.
    for src in Source::ALL {
        let left: Vec<_> = fs::read_dir(e.pipeline.inbox(src))
            .unwrap()
            .filter(|d| d.as_ref().unwrap().path().is_file())
            .collect();
        assert!(left.is_empty());
    }
}

#[test]
fn totality_rows_equal_published_plus_quarantined() {
    let e = env();
    let r = e
        .pipeline
        .ingest_bytes(Source::Crm, Format::Csv, "push-1", &fixture("crm-register.csv"))
        .unwrap();
    assert_eq!(r.records, 7);
    assert_eq!(r.published + r.quarantined, r.records);
    assert_eq!(r.quarantined, 3);
    assert_eq!(
        quarantine_reasons(&e.root),
        [
            reason::CONSENT_ABSENT.to_string(),
            reason::DUP_EXTERNAL_ID.to_string(),
            reason::invalid("birth_date"),
        ]
    );
    assert_eq!(drain(&e.queue, TOPIC_PARTICIPANTS).len(), r.published);
}

#[test]
fn duplicate_accession_quarantines_second_row() {
    let e = env();
    let body = b"accession,patient_id,modality,study_date,report_text,radiologist_id\n\
A-1,1007,CT,2024-06-01,first,R-01\n\
A-1,1008,CT,2024-06-02,second,R-02\n";
    let r = e.pipeline.ingest_bytes(Source::Ris, Format::Csv, "push", body).unwrap();
    assert_eq!((r.records, r.published, r.quarantined), (2, 1, 1));
    assert_eq!(quarantine_reasons(&e.root), [reason::DUP_ACCESSION]);
    assert_eq!(drain(&e.queue, TOPIC_RIS)[0].1["report_text"], "first");
}

#[test]
fn redropped_file_changes_nothing() {
    let e = env();
    let inbox = e.pipeline.inbox(Source::Crm);
    fs::write(inbox.join("a.csv"), fixture("crm-register.csv")).unwrap();
    e.pipeline.poll(Source::Crm).unwrap();
    let before = drain(&e.queue, TOPIC_PARTICIPANTS);
    let q_before = quarantine_reasons(&e.root);

    fs::write(inbox.join("b.csv"), fixture("crm-register.csv")).unwrap();
    let reports = e.pipeline.poll(Source::Crm).unwrap();
    assert!(reports[0].duplicate);
    assert_eq!(reports[0].published, 0);
    assert_eq!(drain(&e.queue, TOPIC_PARTICIPANTS), before);
    assert_eq!(quarantine_reasons(&e.root), q_before);

    // The content-hash ledger survives a restart.
    let root = e.root.clone();
    drop(e.pipeline);
    drop(e.queue);
    let (queue, pipeline) = open(&root);
    let r = pipeline
        .ingest_bytes(Source::Crm, Format::Csv, "again", &fixture("crm-register.csv"))
        .unwrap();
    assert!(r.duplicate);
    assert_eq!(drain(&queue, TOPIC_PARTICIPANTS), before);
}

#[test]
fn payloads_are_deterministic_across_runs() {
    let a = env();
    let b = env();
    for e in [&a, &b] {
        e.pipeline
            .ingest_bytes(Source::Crm, Format::Csv, "x", &fixture("crm-register.csv"))
            .unwrap();
    }
    assert_eq!(
        drain(&a.queue, TOPIC_PARTICIPANTS),
        drain(&b.queue, TOPIC_PARTICIPANTS)
    );
}

#[test]
fn unsupported_and_undecodable_files_quarantine_whole() {
    let e = env();
    let inbox = e.pipeline.inbox(Source::Ehr);
    fs::write(inbox.join("extract.pdf"), b"%PDF").unwrap();
    fs::write(inbox.join("broken.xml"), b"<ehr><patient").unwrap();
    fs::write(inbox.join(".partial.json"), b"[").unwrap();
    let reports = e.pipeline.poll(Source::Ehr).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.quarantined == 1 && r.records == 1));
    assert_eq!(
        quarantine_reasons(&e.root),
        [reason::UNDECODABLE, reason::UNSUPPORTED_FORMAT]
    );
    assert!(inbox.join(".partial.json").exists());
}

#[test]
fn failed_append_is_held_for_retry() {
    let e = env();
    // A plain file where the topic directory should be makes appends fail.
    let blocker = e.root.join("queue").join(TOPIC_RIS);
    fs::create_dir_all(blocker.parent().unwrap()).unwrap();
    fs::write(&blocker, b"").unwrap();

    let path = e.pipeline.inbox(Source::Ris).join("r.csv");
    fs::write(&path, fixture("ris-protocols.csv")).unwrap();
    let reports = e.pipeline.poll(Source::Ris).unwrap();
    assert_eq!(reports[0].pending_retry, 2);
    assert!(path.exists(), "file stays in the inbox until published");
    assert_eq!(e.pipeline.pending_retries(), 2);

    fs::remove_file(&blocker).unwrap();
    assert_eq!(e.pipeline.flush_retries().unwrap(), 0);
    assert_eq!(drain(&e.queue, TOPIC_RIS).len(), 2);
}
