//! Shared fixture builders and test-local oracles for the integration and
//! acceptance suites.
//!
//! The oracles here re-derive expected values from the raw files with their
//! own logic; they never call the pipeline's metric implementations.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Writes one CSV file with `csv` so quoting is handled uniformly.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) {
    let mut writer = csv::Writer::from_path(path).unwrap();
    writer.write_record(header).unwrap();
    for row in rows {
        writer.write_record(row).unwrap();
    }
    writer.flush().unwrap();
}

const METADATA_HEADER: [&str; 8] = [
    "ontology",
    "code",
    "name",
    "kind",
    "dataType",
    "unit",
    "categories",
    "visibility",
];

#[derive(Clone, Default)]
pub struct MetaRow {
    pub ontology: String,
    pub code: String,
    pub name: String,
    pub kind: String,
    pub data_type: String,
    pub unit: String,
    pub categories: String,
    pub visibility: String,
}

impl MetaRow {
    fn as_vec(&self) -> Vec<String> {
        vec![
            self.ontology.clone(),
            self.code.clone(),
            self.name.clone(),
            self.kind.clone(),
            self.data_type.clone(),
            self.unit.clone(),
            self.categories.clone(),
            self.visibility.clone(),
        ]
    }
}

pub fn write_metadata(path: &Path, rows: &[MetaRow]) {
    let header: Vec<String> = METADATA_HEADER.iter().map(|s| s.to_string()).collect();
    let data: Vec<Vec<String>> = rows.iter().map(MetaRow::as_vec).collect();
    write_csv(path, &header, &data);
}

/// The H2-shaped scenario: 62 features (54 mapped, 10 categorical all with
/// categories, 46 numeric with exactly one unit-bearing), 5 datasets none
/// requiring extraction, 65 candidate columns of which 60 are selected,
/// 111 patients, and 888/748/251/70 records per kind.
pub struct H2Fixture {
    pub manifest_path: PathBuf,
    pub store_root: PathBuf,
}

fn patient_id(i: usize) -> String {
    format!("P{:03}", i + 1)
}

pub fn build_h2_fixture(dir: &Path) -> H2Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut label_pairs: BTreeSet<(String, String)> = BTreeSet::new();
    fn register(pairs: &mut BTreeSet<(String, String)>, code: &str) {
        pairs.insert(("snomed ct".to_string(), code.to_string()));
    }

    let category_cell = |cats: &[(&str, &str)],
                         label_pairs: &mut BTreeSet<(String, String)>|
     -> String {
        cats.iter()
            .map(|(value, code)| {
                label_pairs.insert(("snomed ct".to_string(), code.to_string()));
                format!("{value}=snomed ct:{code}")
            })
            .collect::<Vec<_>>()
            .join(";")
    };

    let mut rows: Vec<MetaRow> = Vec::new();
    let snomed = |code: &str, name: &str, data_type: &str, kind: &str| MetaRow {
        ontology: "snomed ct".into(),
        code: code.into(),
        name: name.into(),
        kind: kind.into(),
        data_type: data_type.into(),
        visibility: "public".into(),
        ..MetaRow::default()
    };

    // Phenotypic metadata: 9 features, 7 categorical.
    rows.push(snomed("422549004", "individual_id", "string", "phenotypic"));
    register(&mut label_pairs, "422549004");
    let ethnicity_cats = [
        ("asian", "315280000"),
        ("white", "413773004"),
        ("black", "413464008"),
        ("other", "863901009"),
    ];
    let mut ethnicity = snomed("397731000", "ethnicity", "category", "phenotypic");
    ethnicity.categories = category_cell(&ethnicity_cats, &mut label_pairs);
    rows.push(ethnicity);
    register(&mut label_pairs, "397731000");

    let sex_cats = [("M", "248153007"), ("F", "248152002")];
    let mut sex = snomed("734000001", "sex", "category", "phenotypic");
    sex.categories = category_cell(&sex_cats, &mut label_pairs);
    rows.push(sex);
    register(&mut label_pairs, "734000001");

    let mut calc_age = snomed("397669002", "calc_age", "integer", "phenotypic");
    calc_age.unit = "years".into();
    calc_age.visibility = "private".into();
    rows.push(calc_age);
    register(&mut label_pairs, "397669002");

    let ihd_cats = [
        ("no", "861000000"),
        ("yes.stent", "861000001"),
        ("unknown", "861000002"),
        ("yes.no.intervention", "861000003"),
        ("yes.cabg", "861000004"),
    ];
    let mut ihd = snomed("307294006:246454002=\"IHD\"", "ihd", "category", "phenotypic");
    ihd.categories = category_cell(&ihd_cats, &mut label_pairs);
    rows.push(ihd);
    register(&mut label_pairs, "307294006:246454002=\"IHD\"");

    let vte_cats = [
        ("yes.dvt", "862000000"),
        ("yes.pe", "862000001"),
        ("yes.other", "862000002"),
        ("no", "862000003"),
    ];
    let mut vte = snomed(
        "307294006:246454002=111293003",
        "previous_vte",
        "category",
        "phenotypic",
    );
    vte.categories = category_cell(&vte_cats, &mut label_pairs);
    rows.push(vte);
    register(&mut label_pairs, "307294006:246454002=111293003");

    let copd_cats = [
        ("yes", "863000000"),
        ("no", "863000001"),
        ("copd", "863000002"),
        ("bi", "863000003"),
    ];
    let mut copd = snomed("13645005", "copd", "category", "phenotypic");
    copd.categories = category_cell(&copd_cats, &mut label_pairs);
    rows.push(copd);
    register(&mut label_pairs, "13645005");

    let diabetes_cats = [
        ("yes.T1", "864000000"),
        ("yes.T2", "864000001"),
        ("no", "864000002"),
    ];
    let mut diabetes = snomed("73211009", "diabetes", "category", "phenotypic");
    diabetes.categories = category_cell(&diabetes_cats, &mut label_pairs);
    rows.push(diabetes);
    register(&mut label_pairs, "73211009");

    let smoking_cats = [
        ("never", "865000000"),
        ("not.current", "865000001"),
        ("ex", "865000002"),
        ("unknown", "865000003"),
        ("current", "865000004"),
    ];
    let mut smoking = snomed("365981007", "smoking", "category", "phenotypic");
    smoking.categories = category_cell(&smoking_cats, &mut label_pairs);
    rows.push(smoking);
    register(&mut label_pairs, "365981007");

    // Clinical metadata: individual_id + sample_id + 45 numeric markers,
    // the last 8 markers unmapped.
    rows.push(snomed("422549004", "individual_id", "string", "clinical"));
    let mut sample = MetaRow {
        ontology: "loinc".into(),
        code: "57723-9".into(),
        name: "sample_id".into(),
        kind: "clinical".into(),
        data_type: "string".into(),
        visibility: "public".into(),
        ..MetaRow::default()
    };
    label_pairs.insert(("loinc".into(), "57723-9".into()));
    rows.push(std::mem::take(&mut sample));
    for i in 1..=45 {
        let mut row = MetaRow {
            name: format!("marker_{i:02}"),
            kind: "clinical".into(),
            data_type: "numeric".into(),
            visibility: "public".into(),
            ..MetaRow::default()
        };
        if i <= 37 {
            row.ontology = "snomed ct".into();
            row.code = if i == 1 {
                "117400003:260864003=732272000".into()
            } else {
                format!("1174{i:05}")
            };
            register(&mut label_pairs, &row.code);
        }
        rows.push(row);
    }

    // Diagnosis metadata: individual_id + 2 categorical + 1 boolean.
    rows.push(snomed("422549004", "individual_id", "string", "diagnosis"));
    let cause_cats = [
        ("DN", "866000000"),
        ("Unknown", "866000001"),
        ("other", "866000002"),
        ("GN", "866000003"),
        ("HTN", "866000004"),
        ("Genetic", "866000005"),
    ];
    let mut cause = snomed("46177005", "cause_eskd", "category", "diagnosis");
    cause.categories = category_cell(&cause_cats, &mut label_pairs);
    rows.push(cause);
    register(&mut label_pairs, "46177005");

    let severity_cats = [
        ("moderate", "867000000"),
        ("mild", "867000001"),
        ("severe", "867000002"),
        ("critical", "867000003"),
    ];
    let mut severity = snomed(
        "405162009:47429007=840539006",
        "WHO_severity",
        "category",
        "diagnosis",
    );
    severity.categories = category_cell(&severity_cats, &mut label_pairs);
    rows.push(severity);
    register(&mut label_pairs, "405162009:47429007=840539006");

    rows.push(snomed("419620001", "fatal_disease", "boolean", "diagnosis"));
    register(&mut label_pairs, "419620001");

    // Imaging metadata: individual_id + one 10-category feature.
    rows.push(snomed("422549004", "individual_id", "string", "imaging"));
    let radiology_cats = [
        ("cxr", "868000000"),
        ("no", "868000001"),
        ("not.done", "868000002"),
        ("yes", "868000003"),
        ("yes:CVCX1", "868000004"),
        ("yes:extensiveBilateralAirspaceConsolidation", "868000005"),
        ("yes:extensiveConsolidation", "868000006"),
        ("yes:leftBasalInfiltrate", "868000007"),
        ("yes:patchyBilateralConsolidation", "868000008"),
        ("yes:patchyOpacificationBothLungFields", "868000009"),
    ];
    let mut radiology = snomed(
        "840539006:363589002=363680008",
        "radiology_evidence_covid",
        "category",
        "imaging",
    );
    radiology.categories = category_cell(&radiology_cats, &mut label_pairs);
    rows.push(radiology);
    register(&mut label_pairs, "840539006:363589002=363680008");

    assert_eq!(rows.len(), 62, "fixture metadata must have 62 rows");
    write_metadata(&dir.join("metadata.csv"), &rows);

    // Static label table covering every referenced (system, code) pair.
    let mut tsv = String::new();
    for (system, code) in &label_pairs {
        tsv.push_str(&format!("{system}\t{code}\tConcept {code}\n"));
    }
    std::fs::write(dir.join("labels.tsv"), tsv).unwrap();

    // phenotypic.csv: full 8x111 grid plus two unmapped columns.
    let pick = |cats: &[(&str, &str)], i: usize| cats[i % cats.len()].0.to_string();
    let pheno_header: Vec<String> = [
        "individual_id",
        "ethnicity",
        "sex",
        "calc_age",
        "ihd",
        "previous_vte",
        "copd",
        "diabetes",
        "smoking",
        "time_from_first_symptoms",
        "time_from_first_positive_swab",
    ]
    .map(str::to_string)
    .to_vec();
    let pheno_rows: Vec<Vec<String>> = (0..111)
        .map(|i| {
            vec![
                patient_id(i),
                pick(&ethnicity_cats, i),
                pick(&sex_cats, i),
                format!("{}", 18 + (i * 7) % 80),
                pick(&ihd_cats, i),
                pick(&vte_cats, i),
                pick(&copd_cats, i),
                pick(&diabetes_cats, i),
                pick(&smoking_cats, i),
                format!("{}:30", i % 24),
                format!("{}:45", (i + 3) % 24),
            ]
        })
        .collect();
    write_csv(&dir.join("phenotypic.csv"), &pheno_header, &pheno_rows);

    // clinical.csv: exactly 748 non-empty marker cells out of 45x111.
    let mut cell_ids: Vec<usize> = (0..45 * 111).collect();
    cell_ids.shuffle(&mut rng);
    let nonempty: HashSet<usize> = cell_ids.into_iter().take(748).collect();
    let mut clin_header = vec!["individual_id".to_string(), "sample_id".to_string()];
    clin_header.extend((1..=45).map(|i| format!("marker_{i:02}")));
    let clin_rows: Vec<Vec<String>> = (0..111)
        .map(|p| {
            let mut row = vec![patient_id(p), format!("S{:03}", p + 1)];
            for m in 0..45 {
                if nonempty.contains(&(p * 45 + m)) {
                    row.push(format!("{}.{}", (p * 13 + m * 7) % 90, m % 10));
                } else {
                    row.push(String::new());
                }
            }
            row
        })
        .collect();
    write_csv(&dir.join("clinical.csv"), &clin_header, &clin_rows);

    // diagnosis.csv: 91 + 90 + 70 non-empty cells and one unmapped column.
    let choose = |rng: &mut ChaCha8Rng, n: usize| -> HashSet<usize> {
        let mut ids: Vec<usize> = (0..111).collect();
        ids.shuffle(rng);
        ids.into_iter().take(n).collect()
    };
    let cause_rows = choose(&mut rng, 91);
    let severity_rows = choose(&mut rng, 90);
    let fatal_rows = choose(&mut rng, 70);
    let booleans = ["true", "False", "yes", "NO", "1", "0"];
    let diag_header: Vec<String> = [
        "individual_id",
        "cause_eskd",
        "WHO_severity",
        "fatal_disease",
        "WHO_temp_severity",
    ]
    .map(str::to_string)
    .to_vec();
    let diag_rows: Vec<Vec<String>> = (0..111)
        .map(|i| {
            vec![
                patient_id(i),
                if cause_rows.contains(&i) {
                    pick(&cause_cats, i)
                } else {
                    String::new()
                },
                if severity_rows.contains(&i) {
                    pick(&severity_cats, i)
                } else {
                    String::new()
                },
                if fatal_rows.contains(&i) {
                    booleans[i % booleans.len()].to_string()
                } else {
                    String::new()
                },
                format!("temp-{i}"),
            ]
        })
        .collect();
    write_csv(&dir.join("diagnosis.csv"), &diag_header, &diag_rows);

    // imaging.csv: 70 of 111 non-empty.
    let imaging_rows_set = choose(&mut rng, 70);
    let img_header: Vec<String> =
        ["individual_id", "radiology_evidence_covid"].map(str::to_string).to_vec();
    let img_rows: Vec<Vec<String>> = (0..111)
        .map(|i| {
            vec![
                patient_id(i),
                if imaging_rows_set.contains(&i) {
                    pick(&radiology_cats, i)
                } else {
                    String::new()
                },
            ]
        })
        .collect();
    write_csv(&dir.join("imaging.csv"), &img_header, &img_rows);

    // phenotypic2.csv: second phenotypic dataset, data cells all empty.
    let p2_header: Vec<String> =
        ["individual_id", "sex", "calc_age", "extra_a", "extra_b"].map(str::to_string).to_vec();
    let p2_rows: Vec<Vec<String>> = (0..3)
        .map(|i| vec![patient_id(i), String::new(), String::new(), String::new(), String::new()])
        .collect();
    write_csv(&dir.join("phenotypic2.csv"), &p2_header, &p2_rows);

    let manifest_path = dir.join("run.toml");
    let manifest = r#"
hospital = "H2"
metadata = "metadata.csv"
storeRoot = "store"

[ontology]
labelSource = "static"
staticTable = "labels.tsv"

[[datasets]]
name = "phenotypic"
path = "phenotypic.csv"
kind = "phenotypic"
patientIdColumn = "individual_id"

[[datasets]]
name = "clinical"
path = "clinical.csv"
kind = "clinical"
patientIdColumn = "individual_id"
sampleIdColumn = "sample_id"

[[datasets]]
name = "diagnosis"
path = "diagnosis.csv"
kind = "diagnosis"
patientIdColumn = "individual_id"

[[datasets]]
name = "imaging"
path = "imaging.csv"
kind = "imaging"
patientIdColumn = "individual_id"

[[datasets]]
name = "phenotypic2"
path = "phenotypic2.csv"
kind = "phenotypic"
patientIdColumn = "individual_id"
"#;
    std::fs::write(&manifest_path, manifest).unwrap();

    H2Fixture {
        manifest_path,
        store_root: dir.join("store"),
    }
}

/// Genomic-scale fixture: `patients` x `genes` RNA counts with ~12% empty
/// cells, a sample id column, and no metadata rows (gene features are
/// synthesized by the pipeline's top-k filter).
pub struct GenomicFixture {
    pub manifest_path: PathBuf,
    pub store_root: PathBuf,
    pub csv_path: PathBuf,
}

pub fn build_genomic_fixture(dir: &Path, patients: usize, genes: usize, top_k: usize) -> GenomicFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    write_metadata(&dir.join("metadata.csv"), &[]);

    let mut header = vec!["patient_id".to_string(), "sample_id".to_string()];
    header.extend((0..genes).map(|g| format!("ENSG{g:08}.{}", g % 17 + 1)));
    let rows: Vec<Vec<String>> = (0..patients)
        .map(|p| {
            let mut row = vec![patient_id(p), format!("S{:03}", p + 1)];
            for _ in 0..genes {
                if rng.random_range(0..100) < 12 {
                    row.push(if rng.random_range(0..2) == 0 {
                        String::new()
                    } else {
                        "NA".to_string()
                    });
                } else {
                    row.push(rng.random_range(0..100_000u32).to_string());
                }
            }
            row
        })
        .collect();
    let csv_path = dir.join("genomic.csv");
    write_csv(&csv_path, &header, &rows);

    let manifest_path = dir.join("run.toml");
    let manifest = format!(
        r#"
hospital = "H1"
metadata = "metadata.csv"
storeRoot = "store"

[transform]
genomicTopK = {top_k}

[[datasets]]
name = "genomic"
path = "genomic.csv"
kind = "genomic"
patientIdColumn = "patient_id"
sampleIdColumn = "sample_id"
"#
    );
    std::fs::write(&manifest_path, manifest).unwrap();
    GenomicFixture {
        manifest_path,
        store_root: dir.join("store"),
        csv_path,
    }
}

/// Brute-force re-derivation of the genomic selection and record count:
/// for each patient take every gene whose count ties or beats the k-th
/// highest (empty cells rank as zero), union the selections, then count
/// non-empty cells in the selected columns.
pub fn genomic_oracle(csv_path: &Path, top_k: usize) -> (BTreeSet<String>, u64) {
    let mut reader = csv::Reader::from_path(csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    let gene_cols: Vec<usize> = (0..header.len()).filter(|i| *i >= 2).collect();
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();

    let is_empty = |cell: &str| {
        let t = cell.trim().to_lowercase();
        t.is_empty() || ["na", "n/a", "null", "none", "-"].contains(&t.as_str())
    };

    let mut selected: BTreeSet<String> = BTreeSet::new();
    for row in &rows {
        let mut counts: Vec<(usize, i64)> = gene_cols
            .iter()
            .map(|&c| {
                let cell = &row[c];
                let count = if is_empty(cell) { 0 } else { cell.trim().parse().unwrap() };
                (c, count)
            })
            .collect();
        let mut sorted: Vec<i64> = counts.iter().map(|(_, v)| *v).collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let threshold = if top_k >= sorted.len() {
            i64::MIN
        } else {
            sorted[top_k - 1]
        };
        counts.retain(|(_, v)| *v >= threshold);
        for (c, _) in counts {
            selected.insert(header[c].trim().to_string());
        }
    }

    let selected_cols: Vec<usize> = gene_cols
        .iter()
        .copied()
        .filter(|&c| selected.contains(header[c].trim()))
        .collect();
    let mut non_empty = 0u64;
    for row in &rows {
        for &c in &selected_cols {
            if !is_empty(&row[c]) {
                non_empty += 1;
            }
        }
    }
    (selected, non_empty)
}

fn read_jsonl(path: &Path) -> Vec<serde_json::Map<String, serde_json::Value>> {
    let Ok(file) = std::fs::File::open(path) else {
        return Vec::new();
    };
    std::io::BufReader::new(file)
        .lines()
        .map(|line| serde_json::from_str(&line.unwrap()).unwrap())
        .collect()
}

/// Test-local naive full scan of a store: recomputes E1–E7 as
/// (numerator, denominator) pairs straight from the JSONL files.
pub fn naive_e_scan(store_root: &Path) -> [(u64, u64); 7] {
    let collections_dir = store_root.join("collections");
    let mut hospital_ids = HashSet::new();
    let mut patient_ids = HashSet::new();
    let mut feature_ids = HashSet::new();

    struct Facts {
        unit_numeric: bool,
        categorical: bool,
        keys: HashSet<String>,
        resources: HashSet<(String, String)>,
    }
    let mut facts: HashMap<String, Facts> = HashMap::new();
    let mut resources = 0u64;
    let mut labeled = 0u64;

    let mut record_files = Vec::new();
    for entry in std::fs::read_dir(&collections_dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name == "hospital.jsonl" {
            for doc in read_jsonl(&path) {
                hospital_ids.insert(doc["identifier"].as_str().unwrap().to_string());
            }
        } else if name == "patient.jsonl" {
            for doc in read_jsonl(&path) {
                patient_ids.insert(doc["identifier"].as_str().unwrap().to_string());
            }
        } else if name.starts_with("feature-") {
            for doc in read_jsonl(&path) {
                let id = doc["identifier"].as_str().unwrap().to_string();
                feature_ids.insert(id.clone());
                let mut count = |v: &serde_json::Value| {
                    if let Some(obj) = v.as_object() {
                        resources += 1;
                        if obj.get("label").and_then(|l| l.as_str()).unwrap_or("") != "" {
                            labeled += 1;
                        }
                    }
                };
                if let Some(r) = doc.get("ontologyResource") {
                    count(r);
                }
                let mut keys = HashSet::new();
                let mut category_resources = HashSet::new();
                if let Some(cats) = doc.get("categories").and_then(|v| v.as_object()) {
                    for (key, v) in cats {
                        keys.insert(key.clone());
                        if !v.is_null() {
                            count(v);
                            category_resources.insert((
                                v["system"].as_str().unwrap().to_string(),
                                v["code"].as_str().unwrap().to_string(),
                            ));
                        }
                    }
                }
                let data_type = doc.get("dataType").and_then(|v| v.as_str()).unwrap_or("");
                let unit = doc.get("unit").and_then(|v| v.as_str());
                facts.insert(
                    id,
                    Facts {
                        unit_numeric: matches!(data_type, "integer" | "numeric")
                            && unit.is_some_and(|u| !u.trim().eq_ignore_ascii_case("none")),
                        categorical: data_type == "category",
                        keys,
                        resources: category_resources,
                    },
                );
            }
        } else if name.starts_with("record-") {
            record_files.push(path);
        }
    }

    let mut total = 0u64;
    let mut succeeded = 0u64;
    let mut unit_total = 0u64;
    let mut unit_matched = 0u64;
    let mut cat_total = 0u64;
    let mut cat_found = 0u64;
    let mut refs = [0u64; 3];

    for path in record_files {
        for doc in read_jsonl(&path) {
            total += 1;
            if doc.get("interopSucceeded") == Some(&serde_json::Value::Bool(true)) {
                succeeded += 1;
            }
            let feature_ref = doc["featureRef"].as_str().unwrap();
            if let Some(f) = facts.get(feature_ref) {
                if f.unit_numeric {
                    unit_total += 1;
                    if doc.get("rawUnitMatched") == Some(&serde_json::Value::Bool(true)) {
                        unit_matched += 1;
                    }
                }
                if f.categorical {
                    cat_total += 1;
                    let found = match &doc["value"] {
                        serde_json::Value::String(s) => f.keys.contains(&s.trim().to_lowercase()),
                        serde_json::Value::Object(o) => f.resources.contains(&(
                            o["system"].as_str().unwrap().to_string(),
                            o["code"].as_str().unwrap().to_string(),
                        )),
                        _ => false,
                    };
                    if found {
                        cat_found += 1;
                    }
                }
            }
            if hospital_ids.contains(doc["hospitalRef"].as_str().unwrap()) {
                refs[0] += 1;
            }
            if patient_ids.contains(doc["patientRef"].as_str().unwrap()) {
                refs[1] += 1;
            }
            if feature_ids.contains(feature_ref) {
                refs[2] += 1;
            }
        }
    }

    [
        (labeled, resources),
        (succeeded, total),
        (unit_matched, unit_total),
        (cat_found, cat_total),
        (refs[0], total),
        (refs[1], total),
        (refs[2], total),
    ]
}

/// Collection name → document count, read from the files.
pub fn collection_counts(store_root: &Path) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for entry in std::fs::read_dir(store_root.join("collections")).unwrap() {
        let path = entry.unwrap().path();
        let name = path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .trim_end_matches(".jsonl")
            .to_string();
        counts.insert(name, read_jsonl(&path).len() as u64);
    }
    counts
}

/// Random end-to-end scenario for oracle-equivalence runs: up to
/// `max_features` features over 1–3 datasets, up to `max_patients`
/// patients, with a mix of valid, invalid, and empty cells.
pub fn build_random_scenario(
    dir: &Path,
    seed: u64,
    max_features: usize,
    max_patients: usize,
    valid_dates_only: bool,
) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = ["phenotypic", "clinical", "diagnosis", "imaging", "medicine"];
    let n_datasets = rng.random_range(1..=3usize);
    let n_features = rng.random_range(n_datasets..=max_features.max(n_datasets));
    let n_patients = rng.random_range(2..=max_patients);

    #[derive(Clone)]
    struct F {
        name: String,
        kind: String,
        data_type: Option<String>,
        unit: Option<String>,
        categories: Vec<(String, Option<String>)>,
        visibility: String,
    }

    let data_types = [
        "string", "integer", "numeric", "boolean", "category", "date", "datetime",
    ];
    let mut features = Vec::new();
    for i in 0..n_features {
        let kind = kinds[rng.random_range(0..n_datasets)].to_string();
        let data_type = if rng.random_range(0..100) < 12 {
            None
        } else {
            Some(data_types[rng.random_range(0..data_types.len())].to_string())
        };
        let unit = match data_type.as_deref() {
            Some("integer") | Some("numeric") => match rng.random_range(0..3) {
                0 => Some("mg".to_string()),
                1 => Some("NONE".to_string()),
                _ => None,
            },
            _ => None,
        };
        let categories = if data_type.as_deref() == Some("category") {
            (0..rng.random_range(1..=4usize))
                .map(|c| {
                    let code = (rng.random_range(0..10) >= 2)
                        .then(|| format!("90{i:02}{c:02}"));
                    (format!("cat_{i}_{c}"), code)
                })
                .collect()
        } else {
            Vec::new()
        };
        let visibility = match data_type.as_deref() {
            Some("date") | Some("datetime") if rng.random_range(0..2) == 0 => "anonymized",
            _ => ["public", "private", "anonymized"][rng.random_range(0..3)],
        }
        .to_string();
        features.push(F {
            name: format!("feat_{i}"),
            kind,
            data_type,
            unit,
            categories,
            visibility,
        });
    }

    let meta_rows: Vec<MetaRow> = features
        .iter()
        .enumerate()
        .map(|(i, f)| MetaRow {
            ontology: if rng.random_range(0..10) < 7 {
                "snomed ct".into()
            } else {
                String::new()
            },
            code: if rng.random_range(0..10) < 7 {
                format!("5550{i:03}")
            } else {
                String::new()
            },
            name: f.name.clone(),
            kind: f.kind.clone(),
            data_type: f.data_type.clone().unwrap_or_default(),
            unit: f.unit.clone().unwrap_or_default(),
            categories: f
                .categories
                .iter()
                .map(|(value, code)| match code {
                    Some(code) => format!("{value}=snomed ct:{code}"),
                    None => value.clone(),
                })
                .collect::<Vec<_>>()
                .join(";"),
            visibility: f.visibility.clone(),
        })
        .collect();
    write_metadata(&dir.join("metadata.csv"), &meta_rows);

    let mut manifest = String::from("hospital = \"HR\"\nmetadata = \"metadata.csv\"\nstoreRoot = \"store\"\n");
    for (d, kind) in kinds.iter().take(n_datasets).enumerate() {
        let columns: Vec<&F> = features.iter().filter(|f| f.kind == *kind).collect();
        let mut header = vec!["pid".to_string()];
        header.extend(columns.iter().map(|f| f.name.clone()));
        if rng.random_range(0..2) == 0 {
            header.push(format!("unmapped_{d}"));
        }
        let rows: Vec<Vec<String>> = (0..n_patients)
            .map(|p| {
                let mut row = vec![format!("P{p:03}")];
                for f in &columns {
                    row.push(random_cell(&mut rng, f.data_type.as_deref(), &f.categories, f.unit.as_deref(), valid_dates_only && f.visibility == "anonymized"));
                }
                if header.len() > columns.len() + 1 {
                    row.push("junk".into());
                }
                row
            })
            .collect();
        let file = format!("{kind}.csv");
        write_csv(&dir.join(&file), &header, &rows);
        manifest.push_str(&format!(
            "\n[[datasets]]\nname = \"{kind}\"\npath = \"{file}\"\nkind = \"{kind}\"\npatientIdColumn = \"pid\"\n"
        ));
    }

    let manifest_path = dir.join("run.toml");
    std::fs::write(&manifest_path, manifest).unwrap();
    manifest_path
}

fn random_cell(
    rng: &mut ChaCha8Rng,
    data_type: Option<&str>,
    categories: &[(String, Option<String>)],
    unit: Option<&str>,
    force_valid: bool,
) -> String {
    let roll = rng.random_range(0..100);
    if !force_valid && roll < 25 {
        return ["", "NA", "null", "-"][rng.random_range(0..4)].to_string();
    }
    let invalid = !force_valid && roll < 40;
    if invalid {
        return format!("??{}", rng.random_range(0..1000));
    }
    match data_type {
        Some("integer") => {
            let n = rng.random_range(0..500);
            match unit {
                Some(u) if !u.eq_ignore_ascii_case("none") && rng.random_range(0..2) == 0 => {
                    format!("{n} {u}")
                }
                _ => n.to_string(),
            }
        }
        Some("numeric") => format!("{}.{}", rng.random_range(0..100), rng.random_range(0..10)),
        Some("boolean") => ["true", "false", "yes", "no", "1", "0"][rng.random_range(0..6)].into(),
        Some("date") => format!(
            "{:04}-{:02}-{:02}",
            rng.random_range(1950..2024),
            rng.random_range(1..13),
            rng.random_range(1..29)
        ),
        Some("datetime") => format!(
            "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}",
            rng.random_range(1950..2024),
            rng.random_range(1..13),
            rng.random_range(1..29),
            rng.random_range(0..24),
            rng.random_range(0..60),
            rng.random_range(0..60)
        ),
        Some("category") if !categories.is_empty() => {
            categories[rng.random_range(0..categories.len())].0.clone()
        }
        _ => format!("text {}", rng.random_range(0..1000)),
    }
}
