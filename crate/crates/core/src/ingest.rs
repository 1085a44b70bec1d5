//! The Extract step: reads datasets verbatim into [`RawTable`]s and applies
//! dataset-level preprocessing (genomic top-k union filtering, gene version
//! stripping). No value normalization happens here; that is the Transform
//! step's job.

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use crate::cdm::DataKind;
use crate::error::EtlError;

/// How one dataset of the run is read and interpreted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetDescriptor {
    pub name: String,
    pub path: PathBuf,
    pub kind: DataKind,
    pub patient_id_column: String,
    pub sample_id_column: Option<String>,
    pub artifact_path_column: Option<String>,
    pub requires_dedicated_extraction: bool,
}

/// An ingested dataset: cells exactly as they appear in the file.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub descriptor: DatasetDescriptor,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    /// Index of a column whose trimmed name matches `name` trimmed.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let wanted = name.trim();
        self.header.iter().position(|h| h.trim() == wanted)
    }

    pub fn patient_column(&self) -> usize {
        self.column_index(&self.descriptor.patient_id_column)
            .expect("patient id column checked at read time")
    }

    /// Columns that carry identifiers or artifact paths rather than values.
    pub fn id_column_indexes(&self) -> HashSet<usize> {
        let mut ids = HashSet::new();
        ids.insert(self.patient_column());
        for configured in [
            self.descriptor.sample_id_column.as_deref(),
            self.descriptor.artifact_path_column.as_deref(),
        ]
        .into_iter()
        .flatten()
        {
            if let Some(idx) = self.column_index(configured) {
                ids.insert(idx);
            }
        }
        ids
    }

    /// Candidate columns for metric A1: everything except the patient id
    /// column (sample id and artifact columns do count, and are always
    /// selected).
    pub fn candidate_columns(&self) -> Vec<usize> {
        let patient = self.patient_column();
        (0..self.header.len()).filter(|i| *i != patient).collect()
    }

    /// Record-producing columns: candidates minus sample id and artifact
    /// path columns.
    pub fn data_columns(&self) -> Vec<usize> {
        let ids = self.id_column_indexes();
        (0..self.header.len()).filter(|i| !ids.contains(i)).collect()
    }
}

/// Reads a dataset as RFC-4180 CSV, keeping cells byte-for-byte. A ragged
/// row, a duplicate header name, or a missing configured column is fatal.
pub fn read_tabular(descriptor: &DatasetDescriptor) -> Result<RawTable, EtlError> {
    let file = std::fs::File::open(&descriptor.path)
        .map_err(|e| EtlError::io(&descriptor.path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(file);

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| EtlError::Dataset {
            dataset: descriptor.name.clone(),
            message: format!("cannot read header: {e}"),
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.trim()) {
            return Err(EtlError::Dataset {
                dataset: descriptor.name.clone(),
                message: format!("duplicate header column '{}'", name.trim()),
            });
        }
    }

    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| EtlError::Dataset {
            dataset: descriptor.name.clone(),
            message: format!("row {row}: {e}"),
        })?;
        if record.len() != header.len() {
            return Err(EtlError::RaggedRow {
                dataset: descriptor.name.clone(),
                row,
            });
        }
        rows.push(record.iter().map(str::to_string).collect());
    }

    let table = RawTable {
        descriptor: descriptor.clone(),
        header,
        rows,
    };

    if table
        .column_index(&descriptor.patient_id_column)
        .is_none()
    {
        return Err(EtlError::Dataset {
            dataset: descriptor.name.clone(),
            message: format!(
                "patient id column '{}' not found in header",
                descriptor.patient_id_column
            ),
        });
    }
    for configured in [
        descriptor.sample_id_column.as_deref(),
        descriptor.artifact_path_column.as_deref(),
    ]
    .into_iter()
    .flatten()
    {
        if table.column_index(configured).is_none() {
            return Err(EtlError::Dataset {
                dataset: descriptor.name.clone(),
                message: format!("configured column '{configured}' not found in header"),
            });
        }
    }

    Ok(table)
}

/// The set of tokens that mean "no value here".
#[derive(Debug, Clone)]
pub struct EmptyMarkers {
    markers: HashSet<String>,
}

impl Default for EmptyMarkers {
    fn default() -> Self {
        EmptyMarkers::new(["", "na", "n/a", "null", "none", "-"].map(str::to_string))
    }
}

impl EmptyMarkers {
    pub fn new(markers: impl IntoIterator<Item = String>) -> Self {
        EmptyMarkers {
            markers: markers
                .into_iter()
                .map(|m| m.trim().to_lowercase())
                .collect(),
        }
    }
}

/// True iff the cell, after trimming, is empty or one of the configured
/// markers (case-insensitive).
pub fn detect_empty(cell: &str, markers: &EmptyMarkers) -> bool {
    let trimmed = cell.trim();
    trimmed.is_empty() || markers.markers.contains(&trimmed.to_lowercase())
}

/// Per-patient top-k gene selection with superset tie semantics, unioned
/// over patients: a column is selected for a patient when its count is not
/// below the patient's k-th highest count, so ties at the cut are all kept.
/// Empty cells rank as count 0; any other non-integer cell is fatal.
pub fn top_k_union_filter(
    table: &RawTable,
    k: usize,
    markers: &EmptyMarkers,
) -> Result<BTreeSet<String>, EtlError> {
    if k == 0 {
        return Err(EtlError::Dataset {
            dataset: table.descriptor.name.clone(),
            message: "top-k filter requires k >= 1".into(),
        });
    }
    let gene_columns = table.data_columns();
    let mut selected = BTreeSet::new();
    for (row_idx, row) in table.rows.iter().enumerate() {
        let mut counts = Vec::with_capacity(gene_columns.len());
        for &col in &gene_columns {
            let cell = &row[col];
            let count: i64 = if detect_empty(cell, markers) {
                0
            } else {
                cell.trim().parse().map_err(|_| EtlError::Dataset {
                    dataset: table.descriptor.name.clone(),
                    message: format!(
                        "row {}, column '{}': cell '{}' is not an integer count",
                        row_idx + 1,
                        table.header[col].trim(),
                        cell
                    ),
                })?
            };
            counts.push((col, count));
        }
        if counts.is_empty() {
            continue;
        }
        let threshold = if k >= counts.len() {
            i64::MIN
        } else {
            let mut sorted: Vec<i64> = counts.iter().map(|(_, c)| *c).collect();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            sorted[k - 1]
        };
        for (col, count) in counts {
            if count >= threshold {
                selected.insert(table.header[col].trim().to_string());
            }
        }
    }
    Ok(selected)
}

/// Drops a trailing version suffix: everything from the last `.` on.
/// Names without a dot are returned unchanged.
pub fn strip_gene_version(gene_name: &str) -> &str {
    match gene_name.rfind('.') {
        Some(idx) => &gene_name[..idx],
        None => gene_name,
    }
}

/// Total candidate columns across all tables (the A1 denominator): every
/// non-patient-id column, counted per dataset, before any selection.
pub fn candidate_feature_count(tables: &[RawTable]) -> usize {
    tables.iter().map(|t| t.candidate_columns().len()).sum()
}
