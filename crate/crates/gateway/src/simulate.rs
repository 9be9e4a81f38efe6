//! Deterministic synthetic sources: a CRM register, RIS reports (CSV and
//! TXT), EHR extracts (JSON and XML) and CT studies as DICOM files, plus a
//! ledger of everything generated for use as a test oracle.
//!
//! Output layout under `out`:
//! `crm/participants.csv`, `ris/protocols.{csv,txt}`, `ehr/extract.{json,xml}`,
//! `dicom/<external_id>-<study>-<instance>.dcm` and `ledger.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use screenforge_dicom::{serialize, tags, Dataset, DicomFile, Element, Tag, Vr};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub seed: u64,
    pub participants: usize,
    /// Fraction of participants generated to fail exactly one eligibility
    /// rule.
    pub ineligible_rate: f64,
    /// Fraction of eligible participants with a category 3 first round and
    /// a second (follow-up) study a year later.
    pub follow_up_rate: f64,
    /// Fraction of eligible participants with an implausibly large nodule.
    pub anomaly_rate: f64,
    pub instances_per_study: usize,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            seed: 42,
            participants: 50,
            ineligible_rate: 0.2,
            follow_up_rate: 0.6,
            anomaly_rate: 0.1,
            instances_per_study: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNodule {
    pub lobe: String,
    pub composition: String,
    pub diameter_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudy {
    pub study_uid: String,
    pub accession: String,
    pub study_date: NaiveDate,
    pub instances: usize,
    pub nodule: Option<SimNodule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParticipant {
    pub external_id: String,
    pub full_name: String,
    pub phone: String,
    pub birth_date: NaiveDate,
    pub sex: String,
    pub pack_years: f64,
    /// `None` for current smokers.
    pub years_since_quit: Option<f64>,
    pub registered_at: DateTime<Utc>,
    pub eligible: bool,
    /// The one rule an ineligible participant was generated to fail.
    pub ineligible_reason: Option<String>,
    pub anomaly: bool,
    pub diagnoses: Vec<(NaiveDate, String, String)>,
    pub studies: Vec<SimStudy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub spec: SimulationSpec,
    pub participants: Vec<SimParticipant>,
}

impl Ledger {
    pub fn study_count(&self) -> usize {
        self.participants.iter().map(|p| p.studies.len()).sum()
    }

    pub fn load(dir: &Path) -> anyhow::Result<Ledger> {
        let path = dir.join("ledger.json");
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

const SURNAMES: [&str; 16] = [
    "Abramova", "Belousov", "Voronina", "Gusarov", "Dorofeeva", "Zhdanov", "Kovaleva", "Lapshin",
    "Mironova", "Nesterov", "Orlova", "Prokhorov", "Rudneva", "Sokolov", "Tarasova", "Fedoseev",
];
const GIVEN: [&str; 12] = [
    "Alevtina", "Bogdan", "Vasilisa", "Gennadiy", "Evdokiya", "Zakhar", "Inessa", "Kondratiy",
    "Lyudmila", "Miroslav", "Nadezhda", "Svyatoslav",
];
const LOBES: [&str; 5] = ["RUL", "RML", "RLL", "LUL", "LLL"];
const COMPOSITIONS: [&str; 3] = ["solid", "part-solid", "ground-glass"];
const DIAGNOSES: [(&str, &str); 4] = [
    ("J44.9", "Chronic obstructive pulmonary disease"),
    ("I10", "Essential hypertension"),
    ("E11.9", "Type 2 diabetes mellitus"),
    ("J45.9", "Asthma"),
];
const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";
const UID_PREFIX: &str = "1.2.826.0.1.3680043.10.543";

fn ext_id(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
    let tail: String = (0..8).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect();
    format!("SF{tail}")
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// The `k`-th of `n` evenly spaced points in `[lo, hi]`. Diameters are
/// spread rather than drawn so that ordinary values never look like
/// outliers next to each other, whatever the cohort size.
fn spread(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    if n <= 1 {
        (lo + hi) / 2.0
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

fn years_before(d: NaiveDate, years: i32, extra_days: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year() - years, 1, 1).unwrap() + Duration::days(extra_days)
}

/// Generates the participant list without touching the filesystem.
pub fn plan(spec: &SimulationSpec) -> Ledger {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.participants;
    let n_inelig = (n as f64 * spec.ineligible_rate).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let ineligible: Vec<usize> = order[..n_inelig.min(n)].to_vec();
    let eligible: Vec<usize> = order[n_inelig.min(n)..].to_vec();
    let n_follow = (eligible.len() as f64 * spec.follow_up_rate).round() as usize;
    let follow: Vec<usize> = eligible[..n_follow].to_vec();
    let rest = &eligible[n_follow..];
    let n_anom = ((eligible.len() as f64 * spec.anomaly_rate).round() as usize).min(rest.len());
    let anomalous: Vec<usize> = rest[..n_anom].to_vec();
    let mut regular: Vec<usize> = rest[n_anom..].to_vec();
    regular.sort_unstable();

    let base = Utc.with_ymd_and_hms(2024, 1, 8, 9, 0, 0).unwrap();
    let mut seen_ids = std::collections::BTreeSet::new();
    let mut participants = Vec::with_capacity(n);
    for i in 0..n {
        let mut external_id = ext_id(&mut rng);
        while !seen_ids.insert(external_id.clone()) {
            external_id = ext_id(&mut rng);
        }
        let surname = SURNAMES[rng.random_range(0..SURNAMES.len())];
        let given = GIVEN[rng.random_range(0..GIVEN.len())];
        let phone = format!(
            "+7 9{:02} {:03}-{:02}-{:02}",
            rng.random_range(0..100),
            rng.random_range(0..1000),
            rng.random_range(0..100),
            rng.random_range(0..100)
        );
        let registered_at = base + Duration::days(i as i64) + Duration::minutes(rng.random_range(0..480));
        let reg_date = registered_at.date_naive();
        let sex = if rng.random_bool(0.5) { "F" } else { "M" }.to_string();

        let mut age = rng.random_range(52..=78);
        let mut pack_years = round1(rng.random_range(21.0..60.0));
        let mut years_since_quit = if rng.random_bool(0.5) { None } else { Some(round1(rng.random_range(0.5..14.0))) };
        let ineligible_reason = if ineligible.contains(&i) {
            let reason = ["AGE_RANGE", "PACK_YEARS", "YEARS_SINCE_QUIT"][rng.random_range(0..3)];
            match reason {
                "AGE_RANGE" => age = if rng.random_bool(0.5) { rng.random_range(38..=46) } else { rng.random_range(83..=88) },
                "PACK_YEARS" => pack_years = round1(rng.random_range(2.0..18.0)),
                _ => years_since_quit = Some(round1(rng.random_range(16.5..30.0))),
            }
            Some(reason.to_string())
        } else {
            None
        };
        // Birthday well away from the registration date so the age is
        // unambiguous.
        let birth_date = years_before(reg_date, age + 1, rng.random_range(0..180) + (reg_date.ordinal0() as i64 + 30));
        debug_assert_eq!(screenforge_core::ingest::age_on(birth_date, reg_date), age);

        let diagnoses = (0..rng.random_range(0..=2))
            .map(|_| {
                let (code, desc) = DIAGNOSES[rng.random_range(0..DIAGNOSES.len())];
                (reg_date - Duration::days(rng.random_range(30..2000)), code.to_string(), desc.to_string())
            })
            .collect();

        let mut studies = Vec::new();
        if ineligible_reason.is_none() {
            let lobe = LOBES[rng.random_range(0..LOBES.len())].to_string();
            let composition = COMPOSITIONS[rng.random_range(0..COMPOSITIONS.len())].to_string();
            let nodule = |d: f64| Some(SimNodule { lobe: lobe.clone(), composition: composition.clone(), diameter_mm: round1(d) });
            let jitter = rng.random_range(-0.04..0.04);
            let first = if let Some(k) = follow.iter().position(|&f| f == i) {
                nodule(spread(6.1, 7.9, k, follow.len()) + jitter)
            } else if anomalous.contains(&i) {
                nodule(rng.random_range(60.0..90.0))
            } else {
                let k = regular.iter().position(|&r| r == i).unwrap();
                match k % 3 {
                    0 => None,
                    1 => nodule(spread(4.2, 5.8, k / 3, regular.len().div_ceil(3)) + jitter),
                    _ => nodule(spread(8.2, 9.8, k / 3, regular.len().div_ceil(3)) + jitter),
                }
            };
            let date = reg_date + Duration::days(rng.random_range(7..30));
            studies.push((date, first));
            if let Some(k) = follow.iter().position(|&f| f == i) {
                // A year later the nodule has shrunk, held or grown.
                let d = spread(4.2, 9.8, follow.len() - 1 - k, follow.len()) + jitter;
                studies.push((date + Duration::days(365 + rng.random_range(0..21)), nodule(d)));
            }
        }
        let studies = studies
            .into_iter()
            .enumerate()
            .map(|(s, (study_date, nodule))| SimStudy {
                study_uid: format!("{UID_PREFIX}.{}.{}.{}", spec.seed % 1_000_000, i + 1, s + 1),
                accession: format!("A{:06}{}", i + 1, s + 1),
                study_date,
                instances: spec.instances_per_study.max(1),
                nodule,
            })
            .collect();

        participants.push(SimParticipant {
            external_id,
            full_name: format!("{surname}^{given}"),
            phone,
            birth_date,
            sex,
            pack_years,
            years_since_quit,
            registered_at,
            eligible: ineligible_reason.is_none(),
            ineligible_reason,
            anomaly: anomalous.contains(&i),
            diagnoses,
            studies,
        });
    }
    Ledger { spec: spec.clone(), participants }
}

fn display_name(full_name: &str) -> String {
    let mut parts = full_name.split('^');
    let surname = parts.next().unwrap_or_default();
    let given = parts.next().unwrap_or_default();
    format!("{given} {surname}")
}

fn finding(study: &SimStudy) -> String {
    match &study.nodule {
        None => "No pulmonary nodules.".into(),
        Some(n) => format!("Nodule in {}, {}, mean diameter {:.1} mm.", n.lobe, n.composition, n.diameter_mm),
    }
}

/// Reads the nodule diameter back out of a report produced here.
pub fn diameter_from_report(text: &str) -> Option<f64> {
    let rest = &text[text.find("mean diameter ")? + "mean diameter ".len()..];
    rest.split_whitespace().next()?.parse().ok()
}

fn crm_csv(ledger: &Ledger) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(screenforge_core::ingest::CRM_COLUMNS).unwrap();
    for (i, p) in ledger.participants.iter().enumerate() {
        // Mixed date and decimal conventions, as exported by different desks.
        let birth = if i % 3 == 0 { p.birth_date.format("%d.%m.%Y").to_string() } else { p.birth_date.to_string() };
        let pack = if i % 4 == 1 { p.pack_years.to_string().replace('.', ",") } else { p.pack_years.to_string() };
        let quit = p.years_since_quit.map_or("current".to_string(), |y| y.to_string());
        w.write_record([
            p.external_id.as_str(),
            &p.full_name,
            &birth,
            &p.sex,
            &p.phone,
            &pack,
            &quit,
            "Y",
            &p.registered_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        ])
        .unwrap();
    }
    w.into_inner().unwrap()
}

fn ris_files(ledger: &Ledger) -> (Vec<u8>, Vec<u8>) {
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    csv_out.write_record(screenforge_core::ingest::RIS_COLUMNS).unwrap();
    let mut txt = String::new();
    let mut k = 0;
    for p in &ledger.participants {
        for s in &p.studies {
            let intro = format!("Low-dose chest CT for {}.", display_name(&p.full_name));
            let mut second = finding(s);
            if k % 5 == 0 {
                let _ = write!(second, " Callback {}.", p.phone);
            }
            let radiologist = format!("RAD-{:02}", k % 4 + 1);
            if k % 2 == 0 {
                let date = s.study_date.to_string();
                let report = format!("{intro}\n{second}");
                csv_out
                    .write_record([s.accession.as_str(), &p.external_id, "CT", &date, &report, &radiologist])
                    .unwrap();
            } else {
                let _ = write!(
                    txt,
                    "ACCESSION: {}\nPATIENT: {}\nMODALITY: CT\nDATE: {}\nREPORT: {intro}\n  {second}\nRADIOLOGIST: {radiologist}\n\n",
                    s.accession,
                    p.external_id,
                    s.study_date.format("%d.%m.%Y"),
                );
            }
            k += 1;
        }
    }
    (csv_out.into_inner().unwrap(), txt.into_bytes())
}

fn ehr_files(ledger: &Ledger, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut json_docs = Vec::new();
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<ehr>\n");
    for (i, p) in ledger.participants.iter().enumerate() {
        let vital_date = p.registered_at.date_naive() - Duration::days(rng.random_range(1..60));
        let fev1 = rng.random_range(45..100);
        if i % 2 == 0 {
            let diagnoses: Vec<_> = p
                .diagnoses
                .iter()
                .map(|(d, code, desc)| serde_json::json!({"date": d.to_string(), "code": code, "description": desc}))
                .collect();
            json_docs.push(serde_json::json!({
                "patient_id": p.external_id,
                "diagnoses": diagnoses,
                "vitals": [{"date": vital_date.to_string(), "name": "FEV1_PCT", "value": fev1}],
            }));
        } else {
            let _ = writeln!(xml, "  <patient id=\"{}\">", p.external_id);
            for (d, code, desc) in &p.diagnoses {
                let _ = writeln!(
                    xml,
                    "    <diagnosis date=\"{}\" code=\"{code}\" description=\"{desc}\"/>",
                    d.format("%d/%m/%Y")
                );
            }
            let _ = writeln!(xml, "    <vital date=\"{vital_date}\" name=\"FEV1_PCT\" value=\"{fev1}\"/>");
            xml.push_str("  </patient>\n");
        }
    }
    xml.push_str("</ehr>\n");
    (serde_json::to_vec_pretty(&json_docs).unwrap(), xml.into_bytes())
}

fn text(ds: &mut Dataset, tag: Tag, vr: Vr, s: &str) {
    ds.put(Element::text(tag, vr, s));
}

fn us(ds: &mut Dataset, tag: Tag, v: u16) {
    ds.put(Element::new(tag, Vr::US, v.to_le_bytes().to_vec()));
}

/// One 32x32 slice. Lung background around -850 HU with noise; the nodule
/// is a Gaussian blob whose full width at half maximum matches the
/// recorded diameter at 4 mm per pixel.
fn slice_pixels(rng: &mut ChaCha8Rng, nodule: Option<&SimNodule>, centre: (f64, f64), z: f64) -> Vec<u8> {
    const SPACING_MM: f64 = 4.0;
    let mut out = Vec::with_capacity(32 * 32 * 2);
    for y in 0..32 {
        for x in 0..32 {
            let mut hu = -850.0 + rng.random_range(-25.0..25.0);
            if let Some(n) = nodule {
                let sigma = (n.diameter_mm / SPACING_MM) / 2.3548;
                let r2 = (x as f64 - centre.0).powi(2) + (y as f64 - centre.1).powi(2) + z * z;
                hu += 890.0 * (-r2 / (2.0 * sigma * sigma)).exp();
            }
            let stored = (hu + 1024.0).round().clamp(0.0, 4095.0) as u16;
            out.extend_from_slice(&stored.to_le_bytes());
        }
    }
    out
}

fn study_files(p: &SimParticipant, study: &SimStudy, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let centre = (rng.random_range(10.0..22.0), rng.random_range(10.0..22.0));
    let series_uid = format!("{}.1", study.study_uid);
    let mid = (study.instances as f64 - 1.0) / 2.0;
    (0..study.instances)
        .map(|k| {
            let mut ds = Dataset::new();
            text(&mut ds, tags::SOP_CLASS_UID, Vr::UI, CT_IMAGE_STORAGE);
            text(&mut ds, tags::SOP_INSTANCE_UID, Vr::UI, &format!("{series_uid}.{}", k + 1));
            text(&mut ds, tags::STUDY_DATE, Vr::DA, &study.study_date.format("%Y%m%d").to_string());
            text(&mut ds, Tag(0x0008, 0x0030), Vr::TM, "101500");
            text(&mut ds, Tag(0x0008, 0x0050), Vr::SH, &study.accession);
            text(&mut ds, tags::MODALITY, Vr::CS, "CT");
            text(&mut ds, Tag(0x0008, 0x0080), Vr::LO, "City Polyclinic 7");
            text(&mut ds, Tag(0x0008, 0x0090), Vr::PN, "Referring^Physician");
            text(&mut ds, Tag(0x0008, 0x1030), Vr::LO, &format!("LDCT CHEST {}", display_name(&p.full_name)));
            text(&mut ds, tags::PATIENT_NAME, Vr::PN, &p.full_name);
            text(&mut ds, tags::PATIENT_ID, Vr::LO, &p.external_id);
            text(&mut ds, tags::PATIENT_BIRTH_DATE, Vr::DA, &p.birth_date.format("%Y%m%d").to_string());
            text(&mut ds, Tag(0x0010, 0x0040), Vr::CS, &p.sex);
            text(&mut ds, Tag(0x0010, 0x2154), Vr::SH, &p.phone);
            text(&mut ds, Tag(0x0018, 0x0050), Vr::DS, "4");
            text(&mut ds, tags::STUDY_INSTANCE_UID, Vr::UI, &study.study_uid);
            text(&mut ds, tags::SERIES_INSTANCE_UID, Vr::UI, &series_uid);
            text(&mut ds, Tag(0x0020, 0x0011), Vr::IS, "1");
            text(&mut ds, tags::INSTANCE_NUMBER, Vr::IS, &(k + 1).to_string());
            us(&mut ds, Tag(0x0028, 0x0002), 1);
            text(&mut ds, Tag(0x0028, 0x0004), Vr::CS, "MONOCHROME2");
            us(&mut ds, Tag(0x0028, 0x0010), 32);
            us(&mut ds, Tag(0x0028, 0x0011), 32);
            text(&mut ds, Tag(0x0028, 0x0030), Vr::DS, "4\\4");
            us(&mut ds, Tag(0x0028, 0x0100), 16);
            us(&mut ds, Tag(0x0028, 0x0101), 12);
            us(&mut ds, Tag(0x0028, 0x0102), 11);
            us(&mut ds, Tag(0x0028, 0x0103), 0);
            text(&mut ds, tags::WINDOW_CENTER, Vr::DS, "-600");
            text(&mut ds, tags::WINDOW_WIDTH, Vr::DS, "1500");
            text(&mut ds, tags::RESCALE_INTERCEPT, Vr::DS, "-1024");
            text(&mut ds, tags::RESCALE_SLOPE, Vr::DS, "1");
            let pixels = slice_pixels(rng, study.nodule.as_ref(), centre, k as f64 - mid);
            ds.put(Element::new(Tag(0x7FE0, 0x0010), Vr::OW, pixels));
            serialize(&DicomFile::new(ds)).expect("synthetic dataset serializes")
        })
        .collect()
}

/// Writes the full synthetic source tree and returns its ledger. The same
/// spec always produces byte-identical files.
pub fn simulate(spec: &SimulationSpec, out: &Path) -> anyhow::Result<Ledger> {
    let ledger = plan(spec);
    // Separate stream for file contents so the plan does not depend on it.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_F11E);
    let write = |rel: &str, bytes: &[u8]| -> anyhow::Result<()> {
        let path = out.join(rel);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    write("crm/participants.csv", &crm_csv(&ledger))?;
    let (ris_csv, ris_txt) = ris_files(&ledger);
    write("ris/protocols.csv", &ris_csv)?;
    write("ris/protocols.txt", &ris_txt)?;
    let (ehr_json, ehr_xml) = ehr_files(&ledger, &mut rng);
    write("ehr/extract.json", &ehr_json)?;
    write("ehr/extract.xml", &ehr_xml)?;
    for p in &ledger.participants {
        for (s, study) in p.studies.iter().enumerate() {
            for (k, bytes) in study_files(p, study, &mut rng).iter().enumerate() {
                write(&format!("dicom/{}-{}-{}.dcm", p.external_id, s + 1, k + 1), bytes)?;
            }
        }
    }
    write("ledger.json", &serde_json::to_vec_pretty(&ledger)?)?;
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use screenforge_core::registry::flag_outliers;

    fn diameters(ledger: &Ledger) -> Vec<(f64, bool)> {
        ledger
            .participants
            .iter()
            .flat_map(|p| p.studies.iter().filter_map(move |s| s.nodule.as_ref().map(|n| (n.diameter_mm, p.anomaly))))
            .collect()
    }

    #[test]
    fn only_anomalies_stand_out() {
        for seed in 0..40 {
            for n in [5, 10, 20, 50, 120] {
                for anomaly_rate in [0.0, 0.1] {
                    let ledger = plan(&SimulationSpec { seed, participants: n, anomaly_rate, ..SimulationSpec::default() });
                    let d = diameters(&ledger);
                    let values: Vec<f64> = d.iter().map(|(v, _)| *v).collect();
                    let expected: Vec<bool> = d.iter().map(|(_, a)| *a).collect();
                    assert_eq!(flag_outliers(&values), expected, "seed {seed}, n {n}, rate {anomaly_rate}: {values:?}");
                }
            }
        }
    }

    #[test]
    fn report_diameters_round_trip() {
        let ledger = plan(&SimulationSpec::default());
        for s in ledger.participants.iter().flat_map(|p| &p.studies) {
            assert_eq!(diameter_from_report(&finding(s)), s.nodule.as_ref().map(|n| n.diameter_mm));
        }
    }
}
