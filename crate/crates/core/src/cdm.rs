//! The common data model: Hospital, Patient, Feature, Record and the
//! ontology/identifier machinery they share.
//!
//! Every hospital database built by this crate instantiates the same model,
//! so stores produced at different sites can be queried uniformly. Patients
//! are fully pseudonymized: the only attribute they ever carry is their
//! identifier.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Kind of data a feature or record belongs to. The set is open: labels
/// outside the six built-in kinds are accepted (normalized) and routed to a
/// generic collection pair by the store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum DataKind {
    Phenotypic,
    Clinical,
    Medicine,
    Diagnosis,
    Genomic,
    Imaging,
    Other(String),
}

impl DataKind {
    /// Parses a raw label; `known` is false for labels outside the built-in set.
    pub fn parse(label: &str) -> (DataKind, bool) {
        let normalized = label.trim().to_lowercase();
        let kind = match normalized.as_str() {
            "phenotypic" => DataKind::Phenotypic,
            "clinical" => DataKind::Clinical,
            "medicine" => DataKind::Medicine,
            "diagnosis" => DataKind::Diagnosis,
            "genomic" => DataKind::Genomic,
            "imaging" => DataKind::Imaging,
            _ => return (DataKind::Other(normalized), false),
        };
        (kind, true)
    }

    pub fn as_label(&self) -> &str {
        match self {
            DataKind::Phenotypic => "phenotypic",
            DataKind::Clinical => "clinical",
            DataKind::Medicine => "medicine",
            DataKind::Diagnosis => "diagnosis",
            DataKind::Genomic => "genomic",
            DataKind::Imaging => "imaging",
            DataKind::Other(label) => label,
        }
    }

    /// Collection-name suffix. Unknown kinds share the generic pair
    /// (`feature-generic` / `record-generic`); the document's own `kind`
    /// field keeps them distinguishable.
    pub fn collection_suffix(&self) -> &str {
        match self {
            DataKind::Other(_) => "generic",
            known => known.as_label(),
        }
    }
}

impl From<String> for DataKind {
    fn from(label: String) -> Self {
        DataKind::parse(&label).0
    }
}

impl From<DataKind> for String {
    fn from(kind: DataKind) -> String {
        kind.as_label().to_string()
    }
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_label())
    }
}

/// Declared value type of a feature. Closed set: anything else is a parse error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    String,
    Integer,
    Numeric,
    Boolean,
    Category,
    Date,
    Datetime,
}

impl DataType {
    pub fn parse(token: &str) -> Result<DataType, String> {
        match token.trim().to_lowercase().as_str() {
            "string" => Ok(DataType::String),
            "integer" => Ok(DataType::Integer),
            "numeric" => Ok(DataType::Numeric),
            "boolean" => Ok(DataType::Boolean),
            "category" => Ok(DataType::Category),
            "date" => Ok(DataType::Date),
            "datetime" => Ok(DataType::Datetime),
            other => Err(format!("unknown dataType '{other}'")),
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, DataType::Integer | DataType::Numeric)
    }
}

impl std::fmt::Display for DataType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DataType::String => "string",
            DataType::Integer => "integer",
            DataType::Numeric => "numeric",
            DataType::Boolean => "boolean",
            DataType::Category => "category",
            DataType::Date => "date",
            DataType::Datetime => "datetime",
        };
        f.write_str(s)
    }
}

/// Disclosure policy of a feature's values. Absent metadata defaults to
/// `Private`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Anonymized,
    #[default]
    Private,
}

impl Visibility {
    pub fn parse(token: &str) -> Result<Visibility, String> {
        match token.trim().to_lowercase().as_str() {
            "public" => Ok(Visibility::Public),
            "anonymized" => Ok(Visibility::Anonymized),
            "private" => Ok(Visibility::Private),
            other => Err(format!("unknown visibility '{other}'")),
        }
    }
}

impl std::fmt::Display for Visibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Visibility::Public => "public",
            Visibility::Anonymized => "anonymized",
            Visibility::Private => "private",
        };
        f.write_str(s)
    }
}

/// A concept in a published terminology: system and code are mandatory, the
/// human-readable label may be empty when resolution failed (tracked by
/// metric E1).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OntologyResource {
    pub system: String,
    pub code: String,
    #[serde(default)]
    pub label: String,
}

impl OntologyResource {
    pub fn new(system: impl Into<String>, code: impl Into<String>) -> Self {
        OntologyResource {
            system: system.into(),
            code: code.into(),
            label: String::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hospital {
    pub identifier: String,
    pub name: String,
}

impl Hospital {
    /// One hospital per run; the name doubles as the identifier so re-runs
    /// resolve to the same document.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        Hospital {
            identifier: name.clone(),
            name,
        }
    }
}

/// A pseudonymized study subject. The identifier is the only field, ever.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patient {
    pub identifier: String,
}

/// Unit declaration of a numeric feature. `NoUnit` is the explicit "this
/// feature has no unit" sentinel (spelled `NONE` in metadata), distinct from
/// an unspecified unit; both count as unit information for metric M5, but
/// only `Unit` participates in value/unit matching (E3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnitSpec {
    NoUnit,
    Unit(String),
}

impl UnitSpec {
    pub fn parse(cell: &str) -> UnitSpec {
        let trimmed = cell.trim();
        if trimmed.eq_ignore_ascii_case("none") {
            UnitSpec::NoUnit
        } else {
            UnitSpec::Unit(trimmed.to_string())
        }
    }

    /// The matchable unit token, if one exists.
    pub fn token(&self) -> Option<&str> {
        match self {
            UnitSpec::NoUnit => None,
            UnitSpec::Unit(u) => Some(u),
        }
    }
}

impl Serialize for UnitSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            UnitSpec::NoUnit => serializer.serialize_str("NONE"),
            UnitSpec::Unit(u) => serializer.serialize_str(u),
        }
    }
}

impl<'de> Deserialize<'de> for UnitSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Ok(UnitSpec::parse(&raw))
    }
}

/// Ordered map from normalized category string to its ontology resource
/// (absent for code-less categories).
pub type CategoryMap = IndexMap<String, Option<OntologyResource>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Feature {
    pub identifier: String,
    pub kind: DataKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ontology_resource: Option<OntologyResource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_type: Option<DataType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<CategoryMap>,
    pub visibility: Visibility,
    /// Whether visibility was stated in the metadata rather than defaulted
    /// (metric M3 counts only explicit declarations).
    pub visibility_provided: bool,
}

impl Feature {
    /// Unit token to match raw values against, when the feature declares one.
    pub fn effective_unit(&self) -> Option<&str> {
        self.unit.as_ref().and_then(UnitSpec::token)
    }

    /// True when the metadata said anything about the unit, including the
    /// explicit no-unit sentinel.
    pub fn has_unit_info(&self) -> bool {
        self.unit.is_some()
    }

    pub fn is_categorical(&self) -> bool {
        self.data_type == Some(DataType::Category)
    }

    pub fn is_numeric(&self) -> bool {
        self.data_type.map(DataType::is_numeric).unwrap_or(false)
    }
}

/// The value carried by a record: atomic, a date/datetime string in ISO
/// form, or an embedded ontology resource for mapped categorical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordValue {
    Boolean(bool),
    Integer(i64),
    Number(f64),
    Resource(OntologyResource),
    Text(String),
}

impl RecordValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            RecordValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Record {
    pub identifier: String,
    pub kind: DataKind,
    pub value: RecordValue,
    pub dataset: String,
    pub hospital_ref: String,
    pub patient_ref: String,
    pub feature_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vcf: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<String>,
    pub interop_succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_unit_matched: Option<bool>,
}

/// Per-entity identifier counters. Allocation is atomic; values are
/// persisted in the store manifest so re-runs resume instead of resetting.
#[derive(Debug)]
pub struct CounterState {
    patient: AtomicU64,
    feature: AtomicU64,
    record: AtomicU64,
}

impl CounterState {
    pub fn new(patient: u64, feature: u64, record: u64) -> Self {
        CounterState {
            patient: AtomicU64::new(patient),
            feature: AtomicU64::new(feature),
            record: AtomicU64::new(record),
        }
    }

    pub fn fresh() -> Self {
        CounterState::new(0, 0, 0)
    }

    /// Allocates the next patient identifier, `<HospitalName:counter>`.
    pub fn next_patient_id(&self, hospital_name: &str) -> String {
        let n = self.patient.fetch_add(1, Ordering::SeqCst) + 1;
        format!("{hospital_name}:{n}")
    }

    /// Allocates the next feature identifier, `<Feature:counter>`.
    pub fn next_feature_id(&self) -> String {
        let n = self.feature.fetch_add(1, Ordering::SeqCst) + 1;
        format!("Feature:{n}")
    }

    /// Allocates the next record identifier, `<Record:counter>`.
    pub fn next_record_id(&self) -> String {
        let n = self.record.fetch_add(1, Ordering::SeqCst) + 1;
        format!("Record:{n}")
    }

    /// Current (patient, feature, record) counter values.
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.patient.load(Ordering::SeqCst),
            self.feature.load(Ordering::SeqCst),
            self.record.load(Ordering::SeqCst),
        )
    }
}

/// Source patient id → anonymized id mapping. Lives beside the store, never
/// inside the target collections and never in exports; it exists so re-runs
/// assign the same pseudonyms.
#[derive(Debug, Default)]
pub struct AliasTable {
    map: Mutex<IndexMap<String, String>>,
}

impl AliasTable {
    pub fn new() -> Self {
        AliasTable::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        AliasTable {
            map: Mutex::new(entries.into_iter().collect()),
        }
    }

    pub fn get(&self, source_id: &str) -> Option<String> {
        self.map.lock().unwrap().get(source_id).cloned()
    }

    /// Atomic get-or-insert; `alloc` runs only when the source id is new.
    pub fn get_or_insert_with(&self, source_id: &str, alloc: impl FnOnce() -> String) -> String {
        let mut map = self.map.lock().unwrap();
        if let Some(existing) = map.get(source_id) {
            return existing.clone();
        }
        let id = alloc();
        map.insert(source_id.to_string(), id.clone());
        id
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.lock().unwrap().is_empty()
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        self.map
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// A feature invariant violation. Diagnostics, not errors: callers decide
/// whether to proceed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureViolation {
    EmptyName,
    CategoriesOnNonCategory,
    UnitOnNonNumeric,
}

impl std::fmt::Display for FeatureViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FeatureViolation::EmptyName => "empty name",
            FeatureViolation::CategoriesOnNonCategory => "categories on non-category feature",
            FeatureViolation::UnitOnNonNumeric => "unit on non-numeric feature",
        };
        f.write_str(s)
    }
}

/// Checks a feature against the model invariants without mutating it.
pub fn validate_feature(feature: &Feature) -> Vec<FeatureViolation> {
    let mut violations = Vec::new();
    if feature.name.trim().is_empty() {
        violations.push(FeatureViolation::EmptyName);
    }
    if feature.categories.as_ref().is_some_and(|c| !c.is_empty()) && !feature.is_categorical() {
        violations.push(FeatureViolation::CategoriesOnNonCategory);
    }
    if feature.effective_unit().is_some() && !feature.is_numeric() {
        violations.push(FeatureViolation::UnitOnNonNumeric);
    }
    violations
}
