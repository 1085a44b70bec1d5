//! End-to-end orchestration: validate, etl, report, and inspect.
//!
//! `run_etl` is deterministic for a fixed manifest, fixed input files, and a
//! static label source: datasets are processed in name order, records get a
//! final (dataset, identifier) sort, and documents serialize canonically, so
//! two runs into fresh stores produce byte-identical collections.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};

use crate::cdm::{CounterState, DataKind, Feature, Hospital, Record, validate_feature};
use crate::error::{Diagnostic, EtlError};
use crate::ingest::{read_tabular, strip_gene_version, top_k_union_filter, RawTable};
use crate::manifest::RunManifest;
use crate::metadata::{materialize_feature, parse_metadata, FeatureSpec};
use crate::metrics::{
    metric_a1, metric_a2, metrics_e, metrics_e_from_store, metrics_m, InteropReport, MetricId,
    MetricResult, METRIC_ORDER,
};
use crate::store::{
    feature_collection, record_collection, to_document, InsertOutcome, RunInfo, Store, REPORT_FILE,
};
use crate::terminology::{LabelResolver, NullResolver};
use crate::transform::{bind_columns, build_patients, build_records, TransformConfig};

fn now_timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Everything shared by the validate and etl paths: parsed metadata
/// (including synthesized gene specs), ingested tables in dataset-name
/// order, and the collected diagnostics.
pub struct PreparedRun {
    pub hospital: Hospital,
    pub specs: Vec<FeatureSpec>,
    pub tables: Vec<RawTable>,
    pub config: TransformConfig,
    pub diagnostics: Vec<Diagnostic>,
}

fn prepare(manifest: &RunManifest) -> Result<PreparedRun, EtlError> {
    manifest.check_paths()?;
    let config = manifest.transform_config();

    let (mut specs, mut diagnostics) = parse_metadata(&manifest.metadata)?;

    let mut tables = Vec::new();
    for descriptor in manifest.descriptors() {
        tables.push(read_tabular(&descriptor)?);
    }
    tables.sort_by(|a, b| a.descriptor.name.cmp(&b.descriptor.name));

    // Genomic preprocessing: per-patient top-k union selection, then one
    // synthesized feature per selected gene column not already described in
    // the metadata (code = gene name without its version suffix).
    if let Some(k) = config.genomic_top_k {
        for table in &tables {
            if table.descriptor.kind != DataKind::Genomic {
                continue;
            }
            let selected = top_k_union_filter(table, k, &config.empty_markers)?;
            let gene_columns = table.data_columns();
            diagnostics.push(Diagnostic::warning(format!(
                "dataset '{}': top-{k} union filter selected {} of {} gene columns",
                table.descriptor.name,
                selected.len(),
                gene_columns.len()
            )));
            let covered: HashSet<&str> = specs
                .iter()
                .filter(|s| s.kind == DataKind::Genomic)
                .map(|s| s.name.as_str())
                .collect();
            let mut synthesized = Vec::new();
            for column in gene_columns {
                let name = table.header[column].trim();
                if !selected.contains(name) || covered.contains(name) {
                    continue;
                }
                synthesized.push(FeatureSpec {
                    name: name.to_string(),
                    ontology: Some("hgnc".to_string()),
                    code: Some(strip_gene_version(name).to_string()),
                    kind: DataKind::Genomic,
                    data_type: Some(crate::cdm::DataType::Integer),
                    unit: None,
                    categories_raw: None,
                    visibility: Some(crate::cdm::Visibility::Public),
                    source_row: 0,
                });
            }
            specs.append(&mut synthesized);
        }
    }

    Ok(PreparedRun {
        hospital: Hospital::new(manifest.hospital.trim()),
        specs,
        tables,
        config,
        diagnostics,
    })
}

fn materialize_all(
    specs: &[FeatureSpec],
    resolver: &dyn LabelResolver,
    mut assign_id: impl FnMut(&FeatureSpec) -> String,
) -> (Vec<Feature>, Vec<Diagnostic>) {
    let mut features = Vec::with_capacity(specs.len());
    let mut diagnostics = Vec::new();
    for spec in specs {
        let (feature, mut feature_diags) = materialize_feature(spec, assign_id(spec), resolver);
        diagnostics.append(&mut feature_diags);
        for violation in validate_feature(&feature) {
            diagnostics.push(Diagnostic::warning(format!(
                "feature '{}': {violation}",
                feature.name
            )));
        }
        features.push(feature);
    }
    (features, diagnostics)
}

/// A1 accounting. Candidates are counted per dataset (every non-patient-id
/// column); a candidate is selected when it is an id/artifact column or
/// joins a feature by name.
pub struct SelectionStats {
    pub selected: u64,
    pub candidates: u64,
    pub per_dataset: Vec<(String, u64, u64)>,
    pub unmapped: Vec<String>,
    /// Indexes (into the feature list) of features bound to at least one
    /// record-producing column — the features the Load step will persist.
    pub bound_features: HashSet<usize>,
}

fn selection_stats(tables: &[RawTable], features: &[Feature]) -> SelectionStats {
    let mut stats = SelectionStats {
        selected: 0,
        candidates: 0,
        per_dataset: Vec::new(),
        unmapped: Vec::new(),
        bound_features: HashSet::new(),
    };
    for table in tables {
        let candidates = table.candidate_columns().len() as u64;
        let data_columns = table.data_columns().len() as u64;
        let id_columns = candidates - data_columns;
        let (bindings, unmapped) = bind_columns(table, features);
        let selected = bindings.len() as u64 + id_columns;
        stats.selected += selected;
        stats.candidates += candidates;
        stats
            .per_dataset
            .push((table.descriptor.name.clone(), selected, candidates));
        stats.bound_features.extend(bindings.iter().map(|b| b.feature_idx));
        stats.unmapped.extend(
            unmapped
                .into_iter()
                .map(|column| format!("{}: column '{column}' has no feature", table.descriptor.name)),
        );
    }
    stats
}

fn a_metrics(manifest: &RunManifest, stats: &SelectionStats) -> [MetricResult; 2] {
    let mut a1_details = vec![
        "selected/candidates counted per dataset over non-patient-id columns; \
         id and artifact columns always count as selected"
            .to_string(),
    ];
    a1_details.extend(
        stats
            .per_dataset
            .iter()
            .map(|(name, selected, candidates)| format!("{name}: {selected}/{candidates}")),
    );
    a1_details.extend(stats.unmapped.iter().cloned());

    let total = manifest.datasets.len() as u64;
    let no_extraction = manifest
        .datasets
        .iter()
        .filter(|d| !d.requires_dedicated_extraction)
        .count() as u64;
    let a2_details: Vec<String> = manifest
        .datasets
        .iter()
        .filter(|d| d.requires_dedicated_extraction)
        .map(|d| format!("dataset '{}' requires dedicated extraction", d.name))
        .collect();

    [
        metric_a1(stats.selected, stats.candidates).with_details(a1_details),
        metric_a2(no_extraction, total).with_details(a2_details),
    ]
}

pub struct ValidateOutcome {
    pub feature_count: usize,
    pub dataset_count: usize,
    /// Prospective A and M metrics, computable without writing the store.
    pub prospective: Vec<MetricResult>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Pre-flight: parses the metadata, reads dataset headers, checks
/// feature/column joinability and category grammar, and computes the
/// prospective A/M metrics. Nothing is written.
pub fn run_validate(manifest: &RunManifest) -> Result<ValidateOutcome, EtlError> {
    let prepared = prepare(manifest)?;
    let mut diagnostics = prepared.diagnostics;

    let counters = CounterState::fresh();
    let (features, mut feature_diags) =
        materialize_all(&prepared.specs, &NullResolver, |_| counters.next_feature_id());
    diagnostics.append(&mut feature_diags);

    let stats = selection_stats(&prepared.tables, &features);
    for unbound in features
        .iter()
        .enumerate()
        .filter(|(idx, _)| !stats.bound_features.contains(idx))
    {
        diagnostics.push(Diagnostic::warning(format!(
            "feature '{}' ({}) does not match any dataset column",
            unbound.1.name, unbound.1.kind
        )));
    }
    for message in &stats.unmapped {
        diagnostics.push(Diagnostic::warning(message.clone()));
    }

    let [a1, a2] = a_metrics(manifest, &stats);
    let mut prospective = vec![a1, a2];
    prospective.extend(metrics_m(&features));

    Ok(ValidateOutcome {
        feature_count: features.len(),
        dataset_count: prepared.tables.len(),
        prospective,
        diagnostics,
    })
}

#[derive(Debug, Default, Clone, Copy)]
pub struct InsertSummary {
    pub hospitals: InsertOutcome,
    pub patients: InsertOutcome,
    pub features: InsertOutcome,
    pub records: InsertOutcome,
}

pub struct EtlOutcome {
    pub report: InteropReport,
    pub inserted: InsertSummary,
    pub store_root: PathBuf,
    pub report_path: PathBuf,
    pub diagnostics: Vec<Diagnostic>,
}

fn record_sort_key(record: &Record) -> (String, u64) {
    let number = record
        .identifier
        .rsplit(':')
        .next()
        .and_then(|n| n.parse().ok())
        .unwrap_or(0);
    (record.dataset.clone(), number)
}

/// The full Extract → Transform → Load → metrics pipeline.
pub fn run_etl(manifest: &RunManifest) -> Result<EtlOutcome, EtlError> {
    let prepared = prepare(manifest)?;
    let mut diagnostics = prepared.diagnostics;
    let timestamp = now_timestamp();

    let mut store = Store::init(&manifest.store_root)?;
    let counters = store.counters();
    let aliases = store.load_aliases()?;
    let resolver = manifest.build_resolver()?;

    // Transform step 2: features, with identifiers stable across re-runs.
    let ids: Vec<String> = prepared
        .specs
        .iter()
        .map(|spec| store.feature_identifier(&spec.kind, &spec.name, &counters))
        .collect();
    let mut next_id = ids.into_iter();
    let (features, mut feature_diags) = materialize_all(&prepared.specs, &resolver, |_| {
        next_id.next().expect("one id per spec")
    });
    diagnostics.append(&mut feature_diags);

    // Transform step 1: pseudonymized patients.
    let (patients, mut patient_diags) =
        build_patients(&prepared.tables, &prepared.hospital, &aliases, &counters);
    diagnostics.append(&mut patient_diags);

    // Transform step 3: records with interoperable, secured values.
    let mut records: Vec<Record> = Vec::new();
    for table in &prepared.tables {
        let mut build = build_records(
            table,
            &features,
            &aliases,
            &prepared.hospital,
            &counters,
            &prepared.config,
        )
        .inspect_err(|_| {
            let _ = store.mark_dirty("record construction failed");
        })?;
        diagnostics.append(&mut build.diagnostics);
        records.append(&mut build.records);
    }
    records.sort_by_key(record_sort_key);

    let stats = selection_stats(&prepared.tables, &features);
    let loaded_features: Vec<Feature> = features
        .iter()
        .enumerate()
        .filter(|(idx, _)| stats.bound_features.contains(idx))
        .map(|(_, f)| f.clone())
        .collect();

    // Load: counters and aliases are persisted before any document so a
    // crash mid-load can never cause identifier reuse.
    store.begin_load(&counters)?;
    store.persist_aliases(&aliases)?;

    let hospitals_outcome = store.insert_many("hospital", &[to_document(&prepared.hospital)?])?;
    let patient_docs = patients
        .iter()
        .map(to_document)
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = InsertSummary {
        hospitals: hospitals_outcome,
        patients: store.insert_many("patient", &patient_docs)?,
        ..InsertSummary::default()
    };

    for feature in &loaded_features {
        let outcome =
            store.insert_many(&feature_collection(&feature.kind), &[to_document(feature)?])?;
        summary.features.inserted += outcome.inserted;
        summary.features.skipped += outcome.skipped;
    }

    let mut by_collection: indexmap::IndexMap<String, Vec<crate::store::Document>> =
        indexmap::IndexMap::new();
    for record in &records {
        by_collection
            .entry(record_collection(&record.kind))
            .or_default()
            .push(to_document(record)?);
    }
    for (collection, docs) in &by_collection {
        let outcome = store.insert_many(collection, docs)?;
        summary.records.inserted += outcome.inserted;
        summary.records.skipped += outcome.skipped;
    }

    store.build_indexes()?;

    // Metrics: A from selection accounting, M over every materialized
    // feature, E from this run's transform outcomes plus the indexed store.
    let [a1, a2] = a_metrics(manifest, &stats);
    let mut metrics = vec![a1, a2];
    metrics.extend(metrics_m(&features));
    let ref_sets = store.ref_sets();
    metrics.extend(metrics_e(&loaded_features, &records, |kind, id| {
        ref_sets.resolve(kind, id)
    }));
    drop(ref_sets);

    let report = InteropReport::new(prepared.hospital.name.clone(), timestamp.clone(), metrics);
    let report_path = manifest.store_root.join(REPORT_FILE);
    std::fs::write(&report_path, report.to_machine_json() + "\n")
        .map_err(|e| EtlError::io(&report_path, e))?;
    if let Some(extra) = &manifest.report_path {
        std::fs::write(extra, report.to_machine_json() + "\n")
            .map_err(|e| EtlError::io(extra, e))?;
    }

    store.finalize_run(
        &counters,
        RunInfo {
            timestamp,
            hospital: prepared.hospital.name.clone(),
            inserted_records: summary.records.inserted,
            skipped_records: summary.records.skipped,
        },
    )?;

    for warning in store.warnings() {
        diagnostics.push(Diagnostic::warning(warning.clone()));
    }

    Ok(EtlOutcome {
        report,
        inserted: summary,
        store_root: manifest.store_root.clone(),
        report_path,
        diagnostics,
    })
}

#[derive(Debug)]
pub struct ReportOutcome {
    /// The pipeline-logged report persisted by the last etl run, if any.
    pub stored: Option<InteropReport>,
    /// Current view: A/M carried over from the stored report, E re-derived
    /// by a naive full scan of the store documents.
    pub recomputed: InteropReport,
    pub divergences: Vec<String>,
    pub dirty: bool,
    pub dirty_reason: Option<String>,
}

/// Recomputes the E metrics from the store and cross-checks them against
/// the stored pipeline-logged report.
pub fn run_report(store_root: &Path) -> Result<ReportOutcome, EtlError> {
    if !store_root.exists() {
        return Err(EtlError::Manifest(format!(
            "no store at {}",
            store_root.display()
        )));
    }
    let store = Store::init(store_root)?;

    let stored_path = store_root.join(REPORT_FILE);
    let stored = if stored_path.exists() {
        let raw =
            std::fs::read_to_string(&stored_path).map_err(|e| EtlError::io(&stored_path, e))?;
        Some(InteropReport::from_machine_json(&raw)?)
    } else {
        None
    };

    let scanned = metrics_e_from_store(&store)?;

    let hospital = stored
        .as_ref()
        .map(|r| r.hospital.clone())
        .or_else(|| store.runs().last().map(|r| r.hospital.clone()))
        .unwrap_or_default();

    let mut metrics = Vec::with_capacity(14);
    for id in METRIC_ORDER {
        if let Some(scan) = scanned.iter().find(|m| m.id == id) {
            metrics.push(scan.clone());
        } else {
            match stored.as_ref().and_then(|r| r.get(id)) {
                Some(metric) => metrics.push(metric.clone()),
                None => metrics.push(MetricResult::new(id, 0, 0).with_details(vec![
                    "not recomputable from the store and no stored report".to_string(),
                ])),
            }
        }
    }
    let recomputed = InteropReport::new(hospital, now_timestamp(), metrics);

    let mut divergences = Vec::new();
    if let Some(stored_report) = &stored {
        for id in [
            MetricId::E1,
            MetricId::E2,
            MetricId::E3,
            MetricId::E4,
            MetricId::E5,
            MetricId::E6,
            MetricId::E7,
        ] {
            let logged = stored_report.get(id);
            let scan = recomputed.get(id);
            if let (Some(logged), Some(scan)) = (logged, scan) {
                if (logged.numerator, logged.denominator) != (scan.numerator, scan.denominator) {
                    let mut message = format!(
                        "{id}: pipeline-logged {}/{} differs from store scan {}/{}",
                        logged.numerator, logged.denominator, scan.numerator, scan.denominator
                    );
                    if !scan.details.is_empty() {
                        message.push_str(&format!(" ({})", scan.details.join("; ")));
                    }
                    divergences.push(message);
                }
            }
        }
    }

    Ok(ReportOutcome {
        stored,
        recomputed,
        divergences,
        dirty: store.is_dirty(),
        dirty_reason: store.dirty_reason().map(str::to_string),
    })
}

/// Canonical JSON lines of a collection, up to `limit`.
pub fn run_inspect(
    store_root: &Path,
    collection: &str,
    limit: Option<usize>,
) -> Result<Vec<String>, EtlError> {
    if !store_root.exists() {
        return Err(EtlError::Manifest(format!(
            "no store at {}",
            store_root.display()
        )));
    }
    let store = Store::init(store_root)?;
    let names = store.collection_names();
    if !names.iter().any(|n| n == collection) {
        return Err(EtlError::Manifest(format!(
            "no collection '{collection}' (available: {})",
            if names.is_empty() {
                "none".to_string()
            } else {
                names.join(", ")
            }
        )));
    }
    let docs = store.read_collection(collection)?;
    Ok(docs
        .iter()
        .take(limit.unwrap_or(usize::MAX))
        .map(|doc| serde_json::to_string(doc).expect("document serialization cannot fail"))
        .collect())
}
