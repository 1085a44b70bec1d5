//! The 14 interoperability metrics (A1–A2, M1–M5, E1–E7), their
//! classification levels, and the report in human and machine form.
//!
//! Scores are kept as exact numerator/denominator pairs; the two-decimal
//! display uses half-up rounding. A metric with denominator zero is N/A,
//! never 0.00 and never 1.00.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cdm::{DataType, Feature, Record, UnitSpec};
use crate::error::EtlError;
use crate::store::{Document, RefKind, Store};

pub const METRIC_ORDER: [MetricId; 14] = [
    MetricId::A1,
    MetricId::A2,
    MetricId::M1,
    MetricId::M2,
    MetricId::M3,
    MetricId::M4,
    MetricId::M5,
    MetricId::E1,
    MetricId::E2,
    MetricId::E3,
    MetricId::E4,
    MetricId::E5,
    MetricId::E6,
    MetricId::E7,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    A1,
    A2,
    M1,
    M2,
    M3,
    M4,
    M5,
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Interoperability level: full (score = 1), high (0.8 <= score < 1),
/// low (score < 0.8), or not applicable (denominator 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    F,
    H,
    L,
    #[serde(rename = "N-A")]
    NA,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Level::F => "F",
            Level::H => "H",
            Level::L => "L",
            Level::NA => "N-A",
        };
        f.write_str(s)
    }
}

fn classify(numerator: u64, denominator: u64) -> Level {
    if denominator == 0 {
        Level::NA
    } else if numerator == denominator {
        Level::F
    } else if 5 * numerator >= 4 * denominator {
        Level::H
    } else {
        Level::L
    }
}

/// Two-decimal half-up rendering of numerator/denominator.
fn round_score(numerator: u64, denominator: u64) -> Option<String> {
    if denominator == 0 {
        return None;
    }
    let scaled = numerator * 100;
    let mut q = scaled / denominator;
    let r = scaled % denominator;
    if 2 * r >= denominator {
        q += 1;
    }
    Some(format!("{}.{:02}", q / 100, q % 100))
}

const DETAIL_SAMPLE_LIMIT: usize = 10;

fn bounded(mut items: Vec<String>) -> Vec<String> {
    if items.len() > DETAIL_SAMPLE_LIMIT {
        let omitted = items.len() - DETAIL_SAMPLE_LIMIT;
        items.truncate(DETAIL_SAMPLE_LIMIT);
        items.push(format!("... and {omitted} more"));
    }
    items
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub id: MetricId,
    pub numerator: u64,
    pub denominator: u64,
    /// Two-decimal half-up display; None when the metric is N/A.
    pub rounded: Option<String>,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl MetricResult {
    pub fn new(id: MetricId, numerator: u64, denominator: u64) -> Self {
        debug_assert!(numerator <= denominator, "{id}: {numerator}/{denominator}");
        MetricResult {
            id,
            numerator,
            denominator,
            rounded: round_score(numerator, denominator),
            level: classify(numerator, denominator),
            details: Vec::new(),
        }
    }

    pub fn with_details(mut self, details: Vec<String>) -> Self {
        self.details = bounded(details);
        self
    }

    pub fn is_na(&self) -> bool {
        self.denominator == 0
    }

    /// One human-report row: `M1  62  0.87 (H)` or `M4  N/A  N/A`.
    pub fn human_row(&self) -> String {
        match &self.rounded {
            None => format!("{}  N/A  N/A", self.id),
            Some(score) => format!("{}  {}  {} ({})", self.id, self.denominator, score, self.level),
        }
    }
}

/// (A1) ratio of selected features over candidate columns.
pub fn metric_a1(selected: u64, candidates: u64) -> MetricResult {
    MetricResult::new(MetricId::A1, selected, candidates)
}

/// (A2) ratio of datasets not requiring dedicated extraction.
pub fn metric_a2(no_extraction: u64, total_datasets: u64) -> MetricResult {
    MetricResult::new(MetricId::A2, no_extraction, total_datasets)
}

/// (M1)–(M5) over the materialized features.
pub fn metrics_m(features: &[Feature]) -> [MetricResult; 5] {
    let total = features.len() as u64;
    let with_resource = features.iter().filter(|f| f.ontology_resource.is_some()).count() as u64;
    let with_data_type = features.iter().filter(|f| f.data_type.is_some()).count() as u64;
    let with_visibility = features.iter().filter(|f| f.visibility_provided).count() as u64;

    let categorical: Vec<&Feature> = features.iter().filter(|f| f.is_categorical()).collect();
    let with_categories = categorical
        .iter()
        .filter(|f| f.categories.as_ref().is_some_and(|c| !c.is_empty()))
        .count() as u64;

    let numeric: Vec<&Feature> = features.iter().filter(|f| f.is_numeric()).collect();
    let with_unit = numeric.iter().filter(|f| f.has_unit_info()).count() as u64;

    let m4_details: Vec<String> = categorical
        .iter()
        .filter(|f| !f.categories.as_ref().is_some_and(|c| !c.is_empty()))
        .map(|f| format!("categorical feature '{}' has no categories", f.name))
        .collect();
    let m1_details: Vec<String> = features
        .iter()
        .filter(|f| f.ontology_resource.is_none())
        .map(|f| format!("feature '{}' has no ontology mapping", f.name))
        .collect();

    [
        MetricResult::new(MetricId::M1, with_resource, total).with_details(m1_details),
        MetricResult::new(MetricId::M2, with_data_type, total),
        MetricResult::new(MetricId::M3, with_visibility, total),
        MetricResult::new(MetricId::M4, with_categories, categorical.len() as u64)
            .with_details(m4_details),
        MetricResult::new(MetricId::M5, with_unit, numeric.len() as u64),
    ]
}

/// (E1)–(E7) computed from the transform outcomes of the current run: the
/// loaded features (whose resources were created and resolved during
/// Transform), the in-memory records with their interoperability flags, and
/// reference resolution against the freshly indexed store.
pub fn metrics_e(
    loaded_features: &[Feature],
    records: &[Record],
    resolve: impl Fn(RefKind, &str) -> bool,
) -> [MetricResult; 7] {
    let mut resources = 0u64;
    let mut labeled = 0u64;
    let mut unlabeled_details = Vec::new();
    for feature in loaded_features {
        let mut visit = |resource: &crate::cdm::OntologyResource, owner: String| {
            resources += 1;
            if resource.label.is_empty() {
                unlabeled_details.push(format!(
                    "unlabeled resource ({}, {}) on {owner}",
                    resource.system, resource.code
                ));
            } else {
                labeled += 1;
            }
        };
        if let Some(resource) = &feature.ontology_resource {
            visit(resource, format!("feature '{}'", feature.name));
        }
        if let Some(categories) = &feature.categories {
            for (key, resource) in categories {
                if let Some(resource) = resource {
                    visit(resource, format!("category '{key}' of '{}'", feature.name));
                }
            }
        }
    }

    let by_id: HashMap<&str, &Feature> = loaded_features
        .iter()
        .map(|f| (f.identifier.as_str(), f))
        .collect();

    let total = records.len() as u64;
    let mut succeeded = 0u64;
    let mut failed_details = Vec::new();
    let mut unit_denominator = 0u64;
    let mut unit_matched = 0u64;
    let mut categorical_denominator = 0u64;
    let mut categorical_found = 0u64;
    let mut refs_found = [0u64; 3];
    let mut broken_details: [Vec<String>; 3] = Default::default();

    for record in records {
        if record.interop_succeeded {
            succeeded += 1;
        } else {
            failed_details.push(format!(
                "record {} kept its raw value",
                record.identifier
            ));
        }
        if let Some(feature) = by_id.get(record.feature_ref.as_str()) {
            if feature.is_numeric() && feature.effective_unit().is_some() {
                unit_denominator += 1;
                if record.raw_unit_matched == Some(true) {
                    unit_matched += 1;
                }
            }
            if feature.is_categorical() {
                categorical_denominator += 1;
                if record.interop_succeeded {
                    categorical_found += 1;
                }
            }
        }
        let refs = [
            (RefKind::Hospital, record.hospital_ref.as_str()),
            (RefKind::Patient, record.patient_ref.as_str()),
            (RefKind::Feature, record.feature_ref.as_str()),
        ];
        for (slot, (kind, target)) in refs.into_iter().enumerate() {
            if resolve(kind, target) {
                refs_found[slot] += 1;
            } else {
                broken_details[slot]
                    .push(format!("record {} → {target}", record.identifier));
            }
        }
    }

    let unit_features = loaded_features
        .iter()
        .filter(|f| f.is_numeric() && f.effective_unit().is_some())
        .count();
    let e3_details = vec![format!(
        "denominator counts records; unit-bearing numeric features in scope: {unit_features}"
    )];

    let [broken_hospital, broken_patient, broken_feature] = broken_details;
    [
        MetricResult::new(MetricId::E1, labeled, resources).with_details(bounded(unlabeled_details)),
        MetricResult::new(MetricId::E2, succeeded, total).with_details(failed_details),
        MetricResult::new(MetricId::E3, unit_matched, unit_denominator).with_details(e3_details),
        MetricResult::new(MetricId::E4, categorical_found, categorical_denominator),
        MetricResult::new(MetricId::E5, refs_found[0], total).with_details(broken_hospital),
        MetricResult::new(MetricId::E6, refs_found[1], total).with_details(broken_patient),
        MetricResult::new(MetricId::E7, refs_found[2], total).with_details(broken_feature),
    ]
}

fn doc_str<'a>(doc: &'a Document, field: &str) -> Option<&'a str> {
    doc.get(field).and_then(|v| v.as_str())
}

struct FeatureFacts {
    unit_bearing_numeric: bool,
    categorical: bool,
    category_keys: HashSet<String>,
    category_resources: HashSet<(String, String)>,
}

fn feature_facts(doc: &Document) -> FeatureFacts {
    let data_type = doc_str(doc, "dataType").and_then(|t| DataType::parse(t).ok());
    let numeric = data_type.map(DataType::is_numeric).unwrap_or(false);
    let unit_bearing = doc_str(doc, "unit")
        .map(|u| matches!(UnitSpec::parse(u), UnitSpec::Unit(_)))
        .unwrap_or(false);
    let mut category_keys = HashSet::new();
    let mut category_resources = HashSet::new();
    if let Some(categories) = doc.get("categories").and_then(|v| v.as_object()) {
        for (key, resource) in categories {
            category_keys.insert(key.clone());
            if let Some(obj) = resource.as_object() {
                if let (Some(system), Some(code)) = (
                    obj.get("system").and_then(|v| v.as_str()),
                    obj.get("code").and_then(|v| v.as_str()),
                ) {
                    category_resources.insert((system.to_string(), code.to_string()));
                }
            }
        }
    }
    FeatureFacts {
        unit_bearing_numeric: numeric && unit_bearing,
        categorical: data_type == Some(DataType::Category),
        category_keys,
        category_resources,
    }
}

/// (E1)–(E7) re-derived by a naive full scan of the store documents —
/// the oracle path used by the report command to cross-check the
/// pipeline-logged values.
pub fn metrics_e_from_store(store: &Store) -> Result<[MetricResult; 7], EtlError> {
    let mut hospital_ids = HashSet::new();
    let mut patient_ids = HashSet::new();
    let mut feature_ids = HashSet::new();
    let mut features: HashMap<String, FeatureFacts> = HashMap::new();

    let mut resources = 0u64;
    let mut labeled = 0u64;
    let mut unlabeled_details = Vec::new();

    for collection in store.collection_names() {
        if collection == "hospital" || collection == "patient" {
            for doc in store.read_collection(&collection)? {
                if let Some(id) = doc_str(&doc, "identifier") {
                    if collection == "hospital" {
                        hospital_ids.insert(id.to_string());
                    } else {
                        patient_ids.insert(id.to_string());
                    }
                }
            }
        } else if collection.starts_with("feature-") {
            for doc in store.read_collection(&collection)? {
                let Some(id) = doc_str(&doc, "identifier") else {
                    continue;
                };
                feature_ids.insert(id.to_string());
                let mut count_resource = |value: &serde_json::Value, owner: String| {
                    let Some(obj) = value.as_object() else { return };
                    resources += 1;
                    let label = obj.get("label").and_then(|v| v.as_str()).unwrap_or("");
                    if label.is_empty() {
                        unlabeled_details.push(format!("unlabeled resource on {owner}"));
                    } else {
                        labeled += 1;
                    }
                };
                let owner = doc_str(&doc, "name").unwrap_or(id).to_string();
                if let Some(resource) = doc.get("ontologyResource") {
                    count_resource(resource, format!("feature '{owner}'"));
                }
                if let Some(categories) = doc.get("categories").and_then(|v| v.as_object()) {
                    for (key, resource) in categories {
                        if !resource.is_null() {
                            count_resource(resource, format!("category '{key}' of '{owner}'"));
                        }
                    }
                }
                features.insert(id.to_string(), feature_facts(&doc));
            }
        }
    }

    let mut total = 0u64;
    let mut succeeded = 0u64;
    let mut unit_denominator = 0u64;
    let mut unit_matched = 0u64;
    let mut categorical_denominator = 0u64;
    let mut categorical_found = 0u64;
    let mut refs_found = [0u64; 3];
    let mut broken_details: [Vec<String>; 3] = Default::default();

    for collection in store.collection_names() {
        if !collection.starts_with("record-") {
            continue;
        }
        for doc in store.read_collection(&collection)? {
            total += 1;
            let record_id = doc_str(&doc, "identifier").unwrap_or_default().to_string();
            if doc.get("interopSucceeded").and_then(|v| v.as_bool()) == Some(true) {
                succeeded += 1;
            }
            let feature_ref = doc_str(&doc, "featureRef").unwrap_or_default().to_string();
            if let Some(facts) = features.get(&feature_ref) {
                if facts.unit_bearing_numeric {
                    unit_denominator += 1;
                    if doc.get("rawUnitMatched").and_then(|v| v.as_bool()) == Some(true) {
                        unit_matched += 1;
                    }
                }
                if facts.categorical {
                    categorical_denominator += 1;
                    let found = match doc.get("value") {
                        Some(serde_json::Value::String(text)) => {
                            facts.category_keys.contains(&text.trim().to_lowercase())
                        }
                        Some(serde_json::Value::Object(obj)) => match (
                            obj.get("system").and_then(|v| v.as_str()),
                            obj.get("code").and_then(|v| v.as_str()),
                        ) {
                            (Some(system), Some(code)) => facts
                                .category_resources
                                .contains(&(system.to_string(), code.to_string())),
                            _ => false,
                        },
                        _ => false,
                    };
                    if found {
                        categorical_found += 1;
                    }
                }
            }
            let targets = [
                (&hospital_ids, doc_str(&doc, "hospitalRef")),
                (&patient_ids, doc_str(&doc, "patientRef")),
                (&feature_ids, doc_str(&doc, "featureRef")),
            ];
            for (slot, (ids, target)) in targets.into_iter().enumerate() {
                match target {
                    Some(target) if ids.contains(target) => refs_found[slot] += 1,
                    Some(target) => broken_details[slot]
                        .push(format!("record {record_id} → {target}")),
                    None => broken_details[slot].push(format!("record {record_id} → (missing)")),
                }
            }
        }
    }

    let [broken_hospital, broken_patient, broken_feature] = broken_details;
    Ok([
        MetricResult::new(MetricId::E1, labeled, resources).with_details(bounded(unlabeled_details)),
        MetricResult::new(MetricId::E2, succeeded, total),
        MetricResult::new(MetricId::E3, unit_matched, unit_denominator),
        MetricResult::new(MetricId::E4, categorical_found, categorical_denominator),
        MetricResult::new(MetricId::E5, refs_found[0], total).with_details(bounded(broken_hospital)),
        MetricResult::new(MetricId::E6, refs_found[1], total).with_details(bounded(broken_patient)),
        MetricResult::new(MetricId::E7, refs_found[2], total).with_details(bounded(broken_feature)),
    ])
}

/// Pass/fail note anchoring the report to one FAIR interoperability
/// sub-principle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairNote {
    pub id: String,
    pub pass: bool,
    pub rationale: String,
}

/// Derives the I1–I3 anchoring notes from the computed metrics.
pub fn fair_notes(metrics: &[MetricResult]) -> Vec<FairNote> {
    let get = |id: MetricId| metrics.iter().find(|m| m.id == id);
    let level = |id: MetricId| get(id).map(|m| m.level);

    let i2_pass = matches!(level(MetricId::M1), Some(Level::F) | Some(Level::H));
    let i3_pass = [MetricId::E5, MetricId::E6, MetricId::E7]
        .iter()
        .all(|id| level(*id) == Some(Level::F));

    vec![
        FairNote {
            id: "I1".into(),
            pass: true,
            rationale: "data and metadata use one shared document model; metadata is supplied \
                        as a plain tabular file"
                .into(),
        },
        FairNote {
            id: "I2".into(),
            pass: i2_pass,
            rationale: format!(
                "feature-to-vocabulary mapping coverage is M1 = {} (E1 tracks label \
                 resolvability)",
                get(MetricId::M1)
                    .and_then(|m| m.rounded.clone())
                    .unwrap_or_else(|| "N/A".into())
            ),
        },
        FairNote {
            id: "I3".into(),
            pass: i3_pass,
            rationale: "every record carries hospital, patient, and feature references plus \
                        its dataset provenance; E5-E7 measure their resolvability"
                .into(),
        },
    ]
}

/// The full report: the 14 metrics in canonical order plus FAIR notes.
/// Machine and human renderings derive from the same structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InteropReport {
    pub layout_version: u32,
    pub hospital: String,
    pub timestamp: String,
    pub metrics: Vec<MetricResult>,
    pub fair: Vec<FairNote>,
}

impl InteropReport {
    pub fn new(hospital: String, timestamp: String, metrics: Vec<MetricResult>) -> Self {
        debug_assert_eq!(metrics.len(), 14);
        let fair = fair_notes(&metrics);
        InteropReport {
            layout_version: crate::store::LAYOUT_VERSION,
            hospital,
            timestamp,
            metrics,
            fair,
        }
    }

    pub fn get(&self, id: MetricId) -> Option<&MetricResult> {
        self.metrics.iter().find(|m| m.id == id)
    }

    pub fn to_machine_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_machine_json(raw: &str) -> Result<Self, EtlError> {
        serde_json::from_str(raw).map_err(|e| EtlError::Report(format!("machine report: {e}")))
    }

    /// The aligned human table mirroring the published score layout:
    /// one `metric  total  score (level)` row per metric, then notes.
    pub fn render_human(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "interoperability report — hospital {} ({})\n\n",
            self.hospital, self.timestamp
        ));
        out.push_str("metric  total  score  level\n");
        for metric in &self.metrics {
            out.push_str(&metric.human_row());
            out.push('\n');
        }
        let mut notes = String::new();
        for metric in &self.metrics {
            for detail in &metric.details {
                notes.push_str(&format!("  {}: {detail}\n", metric.id));
            }
        }
        if !notes.is_empty() {
            out.push_str("\nnotes:\n");
            out.push_str(&notes);
        }
        out.push_str("\nfair anchoring:\n");
        for note in &self.fair {
            out.push_str(&format!(
                "  {} {} — {}\n",
                note.id,
                if note.pass { "PASS" } else { "FAIL" },
                note.rationale
            ));
        }
        out
    }
}
