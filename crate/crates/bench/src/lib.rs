//! Synthetic data builders shared by the benchmarks.

use cohort_core::cdm::{
    CategoryMap, DataKind, DataType, Feature, OntologyResource, UnitSpec, Visibility,
};
use cohort_core::ingest::{DatasetDescriptor, RawTable};

/// A gene-count table of `patients` rows by `genes` columns with a leading
/// patient id column. Counts are a cheap deterministic mix so rankings vary
/// by patient.
pub fn gene_count_table(patients: usize, genes: usize) -> RawTable {
    let mut header = vec!["patient_id".to_string()];
    header.extend((0..genes).map(|g| format!("ENSG{g:08}.1")));
    let rows = (0..patients)
        .map(|p| {
            let mut row = vec![format!("P{p:04}")];
            row.extend((0..genes).map(|g| (((p * 31 + g * 17) % 9973) as u32).to_string()));
            row
        })
        .collect();
    RawTable {
        descriptor: DatasetDescriptor {
            name: "genomic".into(),
            path: std::path::PathBuf::new(),
            kind: DataKind::Genomic,
            patient_id_column: "patient_id".into(),
            sample_id_column: None,
            artifact_path_column: None,
            requires_dedicated_extraction: false,
        },
        header,
        rows,
    }
}

/// A feature list mixing mapped/unmapped, categorical, and numeric
/// features, for metric benchmarks.
pub fn synthetic_features(n: usize) -> Vec<Feature> {
    (0..n)
        .map(|i| {
            let data_type = match i % 4 {
                0 => DataType::Numeric,
                1 => DataType::Category,
                2 => DataType::String,
                _ => DataType::Integer,
            };
            let categories = (data_type == DataType::Category).then(|| {
                let mut map = CategoryMap::new();
                map.insert("yes".into(), Some(OntologyResource::new("snomed ct", "1")));
                map.insert("no".into(), None);
                map
            });
            Feature {
                identifier: format!("Feature:{}", i + 1),
                kind: DataKind::Clinical,
                name: format!("feature_{i}"),
                ontology_resource: (i % 5 != 0)
                    .then(|| OntologyResource::new("snomed ct", format!("{i}"))),
                data_type: Some(data_type),
                unit: (data_type == DataType::Numeric && i % 7 == 0)
                    .then(|| UnitSpec::Unit("mg".into())),
                categories,
                visibility: Visibility::Public,
                visibility_provided: true,
            }
        })
        .collect()
}
