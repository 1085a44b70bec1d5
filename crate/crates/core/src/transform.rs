//! The Transform step: interoperability functions applied to every raw
//! value, value securing, and construction of Patient/Record instances.
//!
//! Every value function honors the fallback contract: when a technique does
//! not succeed on its input, the function yields the input unchanged and
//! flags the failure (metric E2 counts these).

use chrono::{NaiveDate, NaiveDateTime};

use crate::cdm::{
    AliasTable, CounterState, DataKind, DataType, Feature, Hospital, Patient, Record, RecordValue,
    Visibility,
};
use crate::error::{Diagnostic, EtlError};
use crate::ingest::{detect_empty, EmptyMarkers, RawTable};

/// Run-level knobs of the Transform step.
#[derive(Debug, Clone)]
pub struct TransformConfig {
    /// Ordered chrono patterns tried for `date` features; first match wins.
    pub date_formats: Vec<String>,
    /// Ordered chrono patterns tried for `datetime` features.
    pub datetime_formats: Vec<String>,
    pub empty_markers: EmptyMarkers,
    pub boolean_true: Vec<String>,
    pub boolean_false: Vec<String>,
    /// Per-patient top-k gene selection for genomic datasets; None disables
    /// filtering and gene feature synthesis.
    pub genomic_top_k: Option<usize>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            date_formats: vec!["%Y-%m-%d".into(), "%d/%m/%Y".into(), "%m/%d/%Y".into()],
            datetime_formats: vec![
                "%Y-%m-%dT%H:%M:%S".into(),
                "%Y-%m-%d %H:%M:%S".into(),
                "%d/%m/%Y %H:%M:%S".into(),
                "%m/%d/%Y %H:%M:%S".into(),
            ],
            empty_markers: EmptyMarkers::default(),
            boolean_true: ["true", "yes", "y", "1"].map(str::to_string).to_vec(),
            boolean_false: ["false", "no", "n", "0"].map(str::to_string).to_vec(),
            genomic_top_k: None,
        }
    }
}

/// Outcome of one interoperability function application.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedValue {
    pub value: RecordValue,
    /// Did the function produce a value conforming to the declared dataType?
    pub succeeded: bool,
    /// For numeric features with a declared unit only: did the raw value
    /// carry that unit?
    pub unit_matched: Option<bool>,
}

impl TransformedValue {
    fn ok(value: RecordValue) -> Self {
        TransformedValue {
            value,
            succeeded: true,
            unit_matched: None,
        }
    }

    fn failed(raw: &str) -> Self {
        TransformedValue {
            value: RecordValue::Text(raw.to_string()),
            succeeded: false,
            unit_matched: None,
        }
    }

    fn with_unit_matched(mut self, matched: Option<bool>) -> Self {
        self.unit_matched = matched;
        self
    }
}

/// `string`: trim and lowercase. Always succeeds.
pub fn normalize_string(raw: &str) -> TransformedValue {
    TransformedValue::ok(RecordValue::Text(raw.trim().to_lowercase()))
}

/// `boolean`: cast against the configured token tables, case-insensitive.
pub fn cast_boolean(raw: &str, config: &TransformConfig) -> TransformedValue {
    let token = raw.trim();
    let matches = |candidates: &[String]| candidates.iter().any(|c| token.eq_ignore_ascii_case(c));
    if matches(&config.boolean_true) {
        TransformedValue::ok(RecordValue::Boolean(true))
    } else if matches(&config.boolean_false) {
        TransformedValue::ok(RecordValue::Boolean(false))
    } else {
        TransformedValue::failed(raw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateMode {
    Date,
    Datetime,
}

/// `date`/`datetime`: cast to ISO-8601 using the first matching configured
/// input format.
pub fn cast_date(raw: &str, mode: DateMode, config: &TransformConfig) -> TransformedValue {
    let token = raw.trim();
    match mode {
        DateMode::Date => {
            for format in &config.date_formats {
                if let Ok(date) = NaiveDate::parse_from_str(token, format) {
                    return TransformedValue::ok(RecordValue::Text(
                        date.format("%Y-%m-%d").to_string(),
                    ));
                }
            }
        }
        DateMode::Datetime => {
            for format in &config.datetime_formats {
                if let Ok(datetime) = NaiveDateTime::parse_from_str(token, format) {
                    return TransformedValue::ok(RecordValue::Text(
                        datetime.format("%Y-%m-%dT%H:%M:%S").to_string(),
                    ));
                }
            }
        }
    }
    TransformedValue::failed(raw)
}

/// Length of the leading number token: `[+-]?(\d+(\.\d+)?|\.\d+)` with an
/// optional `[eE][+-]?\d+` exponent.
fn scan_number(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'+') | Some(b'-')) {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i - int_start;
    let mut frac_digits = 0;
    if i < bytes.len() && bytes[i] == b'.' {
        let mut j = i + 1;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        frac_digits = j - (i + 1);
        if frac_digits > 0 {
            i = j;
        }
    }
    if int_digits == 0 && frac_digits == 0 {
        return None;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    Some(i)
}

/// Splits a trimmed value into its leading number and an optional trailing
/// unit token. The remainder after the number (and optional whitespace)
/// must be a single whitespace-free token to count as a unit.
fn split_numeric_unit(trimmed: &str) -> Option<(&str, Option<&str>)> {
    let number_end = scan_number(trimmed)?;
    let rest = trimmed[number_end..].trim_start();
    if rest.is_empty() {
        Some((&trimmed[..number_end], None))
    } else if rest.chars().any(char::is_whitespace) {
        None
    } else {
        Some((&trimmed[..number_end], Some(rest)))
    }
}

fn cast_number(token: &str, data_type: DataType) -> Option<RecordValue> {
    match data_type {
        DataType::Integer => token.parse::<i64>().ok().map(RecordValue::Integer),
        DataType::Numeric => token
            .parse::<f64>()
            .ok()
            .filter(|n| n.is_finite())
            .map(RecordValue::Number),
        _ => None,
    }
}

/// `integer`/`numeric`: strip a matching unit token and cast. A value whose
/// unit differs from the feature's is yielded unchanged; a bare number under
/// a unit-bearing feature casts but counts as unit-unmatched (metric E3).
pub fn cast_numeric(raw: &str, feature: &Feature) -> TransformedValue {
    let data_type = feature.data_type.unwrap_or(DataType::Numeric);
    let feature_unit = feature.effective_unit();
    let trimmed = raw.trim();

    let Some((number_token, value_unit)) = split_numeric_unit(trimmed) else {
        let matched = feature_unit.map(|_| false);
        return TransformedValue::failed(raw).with_unit_matched(matched);
    };

    match (feature_unit, value_unit) {
        (None, None) => match cast_number(number_token, data_type) {
            Some(value) => TransformedValue::ok(value),
            None => TransformedValue::failed(raw),
        },
        (None, Some(_)) => TransformedValue::failed(raw),
        (Some(_), None) => match cast_number(number_token, data_type) {
            Some(value) => TransformedValue::ok(value).with_unit_matched(Some(false)),
            None => TransformedValue::failed(raw).with_unit_matched(Some(false)),
        },
        (Some(declared), Some(carried)) => {
            if carried.eq_ignore_ascii_case(declared) {
                match cast_number(number_token, data_type) {
                    Some(value) => TransformedValue::ok(value).with_unit_matched(Some(true)),
                    None => TransformedValue::failed(raw).with_unit_matched(Some(false)),
                }
            } else {
                TransformedValue::failed(raw).with_unit_matched(Some(false))
            }
        }
    }
}

/// `category`: normalize and look up in the feature's category map. Mapped
/// values become the associated ontology resource (or the bare normalized
/// string for code-less categories).
pub fn map_category(raw: &str, feature: &Feature) -> TransformedValue {
    let key = raw.trim().to_lowercase();
    let Some(categories) = feature.categories.as_ref() else {
        return TransformedValue::failed(raw);
    };
    match categories.get(&key) {
        Some(Some(resource)) => TransformedValue::ok(RecordValue::Resource(resource.clone())),
        Some(None) => TransformedValue::ok(RecordValue::Text(key)),
        None => TransformedValue::failed(raw),
    }
}

/// When a categorical value failed to map, reports whether it matches a
/// category's resource code instead of a category key.
pub fn category_near_miss(raw: &str, feature: &Feature) -> Option<String> {
    let token = raw.trim();
    let categories = feature.categories.as_ref()?;
    categories.iter().find_map(|(key, resource)| {
        resource.as_ref().and_then(|r| {
            (r.code == token).then(|| {
                format!(
                    "value '{token}' for feature '{}' matches the code of category '{key}', \
                     not a category key",
                    feature.name
                )
            })
        })
    })
}

/// Dispatches on the feature's dataType. Features without a declared
/// dataType get string normalization but count as not verifiably
/// interoperable (succeeded = false).
pub fn make_interoperable(raw: &str, feature: &Feature, config: &TransformConfig) -> TransformedValue {
    match feature.data_type {
        Some(DataType::String) => normalize_string(raw),
        Some(DataType::Boolean) => cast_boolean(raw, config),
        Some(DataType::Date) => cast_date(raw, DateMode::Date, config),
        Some(DataType::Datetime) => cast_date(raw, DateMode::Datetime, config),
        Some(DataType::Integer) | Some(DataType::Numeric) => cast_numeric(raw, feature),
        Some(DataType::Category) => map_category(raw, feature),
        None => {
            let mut tv = normalize_string(raw);
            tv.succeeded = false;
            tv
        }
    }
}

fn truncate_chars(text: &str, max: usize) -> String {
    text.chars().take(max).collect()
}

/// Secures a transformed value: anonymized date values lose their day,
/// anonymized datetime values their minutes and seconds. Everything else
/// passes through unchanged. Values that failed the cast are truncated to
/// the same lengths so an anonymized feature never stores a full raw date.
pub fn secure_value(transformed: &TransformedValue, feature: &Feature) -> RecordValue {
    if feature.visibility != Visibility::Anonymized {
        return transformed.value.clone();
    }
    let keep = match feature.data_type {
        Some(DataType::Date) => 7,      // YYYY-MM
        Some(DataType::Datetime) => 13, // YYYY-MM-DDThh
        _ => return transformed.value.clone(),
    };
    match &transformed.value {
        RecordValue::Text(text) => RecordValue::Text(truncate_chars(text, keep)),
        other => other.clone(),
    }
}

/// One patient per distinct source id across all tables, assigned in
/// first-seen order over datasets sorted by name. The alias table makes
/// assignment stable across re-runs; rows with an empty patient id are
/// skipped with a warning.
pub fn build_patients(
    tables: &[RawTable],
    hospital: &Hospital,
    aliases: &AliasTable,
    counters: &CounterState,
) -> (Vec<Patient>, Vec<Diagnostic>) {
    let mut order: Vec<&RawTable> = tables.iter().collect();
    order.sort_by(|a, b| a.descriptor.name.cmp(&b.descriptor.name));

    let mut patients = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut diagnostics = Vec::new();
    for table in order {
        let patient_col = table.patient_column();
        for (row_idx, row) in table.rows.iter().enumerate() {
            let source_id = row[patient_col].trim();
            if source_id.is_empty() {
                diagnostics.push(Diagnostic::warning(format!(
                    "dataset '{}', row {}: empty patient id; row ignored",
                    table.descriptor.name,
                    row_idx + 1
                )));
                continue;
            }
            let identifier =
                aliases.get_or_insert_with(source_id, || counters.next_patient_id(&hospital.name));
            if seen.insert(identifier.clone()) {
                patients.push(Patient { identifier });
            }
        }
    }
    (patients, diagnostics)
}

/// Column → feature binding for one table: joins record-producing columns
/// to features by (dataset kind, trimmed column name).
#[derive(Debug, Clone)]
pub struct ColumnBinding {
    pub column: usize,
    pub feature_idx: usize,
}

pub fn bind_columns(table: &RawTable, features: &[Feature]) -> (Vec<ColumnBinding>, Vec<String>) {
    let by_name: std::collections::HashMap<&str, usize> = features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind == table.descriptor.kind)
        .map(|(idx, f)| (f.name.as_str(), idx))
        .collect();
    let mut bindings = Vec::new();
    let mut unmapped = Vec::new();
    for column in table.data_columns() {
        let column_name = table.header[column].trim();
        match by_name.get(column_name) {
            Some(&feature_idx) => bindings.push(ColumnBinding { column, feature_idx }),
            None => unmapped.push(column_name.to_string()),
        }
    }
    (bindings, unmapped)
}

/// Output of [`build_records`] for one table.
#[derive(Debug, Default)]
pub struct RecordBuild {
    pub records: Vec<Record>,
    pub unmapped_columns: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

const NEAR_MISS_SAMPLE_LIMIT: usize = 20;

/// One record per (row, bound column) with a non-empty cell. The value is
/// the secured, interoperability-transformed cell; kind-specific attributes
/// (baseId / vcf / scan) come from the descriptor-designated columns.
/// A non-empty patient id missing from the alias table is an integrity
/// error: patients must be built first.
pub fn build_records(
    table: &RawTable,
    features: &[Feature],
    aliases: &AliasTable,
    hospital: &Hospital,
    counters: &CounterState,
    config: &TransformConfig,
) -> Result<RecordBuild, EtlError> {
    let (bindings, unmapped_columns) = bind_columns(table, features);
    let patient_col = table.patient_column();
    let sample_col = table
        .descriptor
        .sample_id_column
        .as_deref()
        .and_then(|c| table.column_index(c));
    let artifact_col = table
        .descriptor
        .artifact_path_column
        .as_deref()
        .and_then(|c| table.column_index(c));

    let mut build = RecordBuild {
        unmapped_columns,
        ..RecordBuild::default()
    };

    for (row_idx, row) in table.rows.iter().enumerate() {
        let source_id = row[patient_col].trim();
        if source_id.is_empty() {
            build.diagnostics.push(Diagnostic::warning(format!(
                "dataset '{}', row {}: empty patient id; row skipped",
                table.descriptor.name,
                row_idx + 1
            )));
            continue;
        }
        let patient_ref = aliases.get(source_id).ok_or_else(|| {
            EtlError::Integrity(format!(
                "dataset '{}', row {}: patient id '{}' has no alias; \
                 patients must be built before records",
                table.descriptor.name,
                row_idx + 1,
                source_id
            ))
        })?;

        let optional_cell = |col: Option<usize>| {
            col.map(|c| row[c].trim())
                .filter(|cell| !detect_empty(cell, &config.empty_markers))
                .map(str::to_string)
        };
        let base_id = optional_cell(sample_col);
        let artifact = optional_cell(artifact_col);

        for binding in &bindings {
            let cell = &row[binding.column];
            if detect_empty(cell, &config.empty_markers) {
                continue;
            }
            let feature = &features[binding.feature_idx];
            let transformed = make_interoperable(cell, feature, config);
            if !transformed.succeeded
                && feature.is_categorical()
                && build.diagnostics.len() < NEAR_MISS_SAMPLE_LIMIT
            {
                if let Some(message) = category_near_miss(cell, feature) {
                    build.diagnostics.push(Diagnostic::warning(message));
                }
            }
            let value = secure_value(&transformed, feature);
            build.records.push(Record {
                identifier: counters.next_record_id(),
                kind: feature.kind.clone(),
                value,
                dataset: table.descriptor.name.clone(),
                hospital_ref: hospital.identifier.clone(),
                patient_ref: patient_ref.clone(),
                feature_ref: feature.identifier.clone(),
                base_id: (feature.kind == DataKind::Clinical)
                    .then(|| base_id.clone())
                    .flatten(),
                vcf: (feature.kind == DataKind::Genomic)
                    .then(|| artifact.clone())
                    .flatten(),
                scan: (feature.kind == DataKind::Imaging)
                    .then(|| artifact.clone())
                    .flatten(),
                interop_succeeded: transformed.succeeded,
                raw_unit_matched: transformed.unit_matched,
            });
        }
    }
    Ok(build)
}
