//! Parsing and materialization of the expert-authored metadata file.
//!
//! The metadata is a UTF-8 CSV with exactly the eight template columns
//! (`ontology, code, name, kind, dataType, unit, categories, visibility`,
//! case-insensitive, any order). One row describes one feature; malformed
//! rows are skipped with a diagnostic, a missing or renamed header column is
//! fatal.

use std::io::Read;
use std::path::Path;

use crate::cdm::{
    CategoryMap, DataKind, DataType, Feature, OntologyResource, UnitSpec, Visibility,
};
use crate::error::{Diagnostic, EtlError};
use crate::terminology::LabelResolver;

pub const METADATA_COLUMNS: [&str; 8] = [
    "ontology",
    "code",
    "name",
    "kind",
    "dataType",
    "unit",
    "categories",
    "visibility",
];

/// One parsed metadata row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub ontology: Option<String>,
    pub code: Option<String>,
    pub kind: DataKind,
    pub data_type: Option<DataType>,
    pub unit: Option<String>,
    pub categories_raw: Option<String>,
    pub visibility: Option<Visibility>,
    /// 1-based data row in the source file, for diagnostics. Synthesized
    /// specs (e.g. gene features) use 0.
    pub source_row: usize,
}

impl FeatureSpec {
    pub fn has_resource(&self) -> bool {
        self.ontology.is_some() && self.code.is_some()
    }
}

pub fn parse_metadata(path: &Path) -> Result<(Vec<FeatureSpec>, Vec<Diagnostic>), EtlError> {
    let file = std::fs::File::open(path).map_err(|e| EtlError::io(path, e))?;
    parse_metadata_reader(file)
}

pub fn parse_metadata_reader<R: Read>(
    reader: R,
) -> Result<(Vec<FeatureSpec>, Vec<Diagnostic>), EtlError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| EtlError::Metadata(format!("cannot read header: {e}")))?
        .clone();

    // Map each template column to its position, case-insensitively.
    let mut positions = [usize::MAX; 8];
    let mut seen = vec![false; headers.len()];
    for (template_idx, template) in METADATA_COLUMNS.iter().enumerate() {
        for (col_idx, header) in headers.iter().enumerate() {
            if header.trim().eq_ignore_ascii_case(template) {
                if positions[template_idx] != usize::MAX {
                    return Err(EtlError::Metadata(format!(
                        "duplicate header column '{template}'"
                    )));
                }
                positions[template_idx] = col_idx;
                seen[col_idx] = true;
            }
        }
        if positions[template_idx] == usize::MAX {
            return Err(EtlError::Metadata(format!(
                "missing header column '{template}'"
            )));
        }
    }
    if let Some(unexpected) = headers.iter().enumerate().find(|(i, _)| !seen[*i]) {
        return Err(EtlError::Metadata(format!(
            "unexpected header column '{}'",
            unexpected.1
        )));
    }

    let [ontology_col, code_col, name_col, kind_col, data_type_col, unit_col, categories_col, visibility_col] =
        positions;

    let mut specs: Vec<FeatureSpec> = Vec::new();
    let mut diagnostics = Vec::new();

    for (row_idx, record) in csv_reader.records().enumerate() {
        let row = row_idx + 1;
        let record = match record {
            Ok(record) => record,
            Err(e) => {
                return Err(EtlError::Metadata(format!("row {row}: {e}")));
            }
        };
        if record.iter().all(|cell| cell.trim().is_empty()) {
            continue;
        }
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();
        let optional = |idx: usize| {
            let value = cell(idx);
            (!value.is_empty()).then_some(value)
        };

        let name = cell(name_col);
        if name.is_empty() {
            diagnostics.push(Diagnostic::warning("empty name; row skipped").at_row(row));
            continue;
        }

        let kind_cell = cell(kind_col);
        if kind_cell.is_empty() {
            diagnostics.push(Diagnostic::warning("empty kind; row skipped").at_row(row));
            continue;
        }
        let (kind, known_kind) = DataKind::parse(&kind_cell);
        if !known_kind {
            diagnostics.push(
                Diagnostic::warning(format!(
                    "unknown kind '{kind_cell}'; accepted as an extension kind"
                ))
                .at_row(row),
            );
        }

        let data_type = match optional(data_type_col) {
            None => None,
            Some(token) => match DataType::parse(&token) {
                Ok(dt) => Some(dt),
                Err(message) => {
                    diagnostics
                        .push(Diagnostic::warning(format!("{message}; row skipped")).at_row(row));
                    continue;
                }
            },
        };

        let visibility = match optional(visibility_col) {
            None => None,
            Some(token) => match Visibility::parse(&token) {
                Ok(v) => Some(v),
                Err(message) => {
                    diagnostics
                        .push(Diagnostic::warning(format!("{message}; row skipped")).at_row(row));
                    continue;
                }
            },
        };

        let ontology = optional(ontology_col).map(|o| o.to_lowercase());
        let code = optional(code_col);
        match (&ontology, &code) {
            (Some(_), None) => diagnostics.push(
                Diagnostic::warning(format!("feature '{name}' has an ontology but no code"))
                    .at_row(row),
            ),
            (None, Some(_)) => diagnostics.push(
                Diagnostic::warning(format!("feature '{name}' has a code but no ontology"))
                    .at_row(row),
            ),
            _ => {}
        }

        let mut categories_raw = optional(categories_col);
        if categories_raw.is_some() && data_type != Some(DataType::Category) {
            diagnostics.push(
                Diagnostic::warning(format!(
                    "feature '{name}' declares categories but its dataType is not category; \
                     categories dropped"
                ))
                .at_row(row),
            );
            categories_raw = None;
        }

        if specs
            .iter()
            .any(|existing| existing.name == name && existing.kind == kind)
        {
            diagnostics.push(
                Diagnostic::warning(format!(
                    "duplicate feature ('{name}', {kind}); keeping the first occurrence"
                ))
                .at_row(row),
            );
            continue;
        }

        specs.push(FeatureSpec {
            name,
            ontology,
            code,
            kind,
            data_type,
            unit: optional(unit_col),
            categories_raw,
            visibility,
            source_row: row,
        });
    }

    Ok((specs, diagnostics))
}

/// Writes specs back out in the canonical template column order. Together
/// with [`parse_metadata_reader`] this round-trips well-formed spec lists.
pub fn serialize_metadata<W: std::io::Write>(
    specs: &[FeatureSpec],
    writer: W,
) -> Result<(), EtlError> {
    let mut csv_writer = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| EtlError::Metadata(format!("serialize: {e}"));
    csv_writer.write_record(METADATA_COLUMNS).map_err(io_err)?;
    for spec in specs {
        csv_writer
            .write_record([
                spec.ontology.as_deref().unwrap_or(""),
                spec.code.as_deref().unwrap_or(""),
                &spec.name,
                spec.kind.as_label(),
                &spec.data_type.map(|dt| dt.to_string()).unwrap_or_default(),
                spec.unit.as_deref().unwrap_or(""),
                spec.categories_raw.as_deref().unwrap_or(""),
                &spec.visibility.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(io_err)?;
    }
    csv_writer.flush().map_err(|e| EtlError::Metadata(format!("serialize: {e}")))?;
    Ok(())
}

/// Splits on unescaped occurrences of `delimiter`. Escape sequences are
/// kept intact so later splits still see them; [`unescape`] strips them at
/// the end.
fn split_escaped(cell: &str, delimiter: char) -> Vec<String> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut escaped = false;
    for c in cell.chars() {
        if escaped {
            current.push('\\');
            current.push(c);
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == delimiter {
            parts.push(std::mem::take(&mut current));
        } else {
            current.push(c);
        }
    }
    if escaped {
        current.push('\\');
    }
    parts.push(current);
    parts
}

/// Splits at the first unescaped occurrence of `delimiter`.
fn split_once_escaped(entry: &str, delimiter: char) -> Option<(String, String)> {
    let mut escaped = false;
    for (idx, c) in entry.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == delimiter {
            let head = unescape(&entry[..idx]);
            let tail = entry[idx + c.len_utf8()..].to_string();
            return Some((head, tail));
        }
    }
    None
}

fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut escaped = false;
    for c in raw.chars() {
        if escaped {
            out.push(c);
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else {
            out.push(c);
        }
    }
    if escaped {
        out.push('\\');
    }
    out
}

/// Parses a categories cell. Entries are `;`-separated, each
/// `value=system:code`; the entry splits on the first `=` and the resource
/// on the first `:`, so post-coordinated codes (which contain `:` and `=`)
/// survive intact. Category values are normalized (trim + lowercase);
/// entries without a parseable resource become code-less categories.
pub fn parse_categories(cell: &str) -> (CategoryMap, Vec<Diagnostic>) {
    let mut map = CategoryMap::new();
    let mut diagnostics = Vec::new();
    for entry in split_escaped(cell, ';') {
        if entry.trim().is_empty() {
            continue;
        }
        let (raw_value, resource) = match split_once_escaped(&entry, '=') {
            None => (unescape(&entry), None),
            Some((raw_value, resource_part)) => {
                let resource = match resource_part.split_once(':') {
                    Some((system, code))
                        if !system.trim().is_empty() && !code.trim().is_empty() =>
                    {
                        Some(OntologyResource::new(
                            system.trim().to_lowercase(),
                            code.trim(),
                        ))
                    }
                    _ => {
                        diagnostics.push(Diagnostic::warning(format!(
                            "category '{}' has a malformed resource '{}'; kept without one",
                            raw_value.trim(),
                            resource_part.trim()
                        )));
                        None
                    }
                };
                (raw_value, resource)
            }
        };
        let key = raw_value.trim().to_lowercase();
        if key.is_empty() {
            diagnostics.push(Diagnostic::warning("empty category value; entry skipped"));
            continue;
        }
        if map.contains_key(&key) {
            diagnostics.push(Diagnostic::warning(format!(
                "duplicate category '{key}'; keeping the first occurrence"
            )));
            continue;
        }
        map.insert(key, resource);
    }
    (map, diagnostics)
}

/// Builds a CDM feature from a spec: attaches an ontology resource when
/// both ontology and code are present (label from the resolver, empty when
/// resolution fails), pairs every category with its resource, and defaults
/// missing visibility to private.
pub fn materialize_feature(
    spec: &FeatureSpec,
    identifier: String,
    resolver: &dyn LabelResolver,
) -> (Feature, Vec<Diagnostic>) {
    let mut diagnostics = Vec::new();

    let ontology_resource = match (&spec.ontology, &spec.code) {
        (Some(system), Some(code)) => {
            let label = resolver.resolve_label(system, code);
            Some(OntologyResource::new(system.clone(), code.clone()).with_label(label))
        }
        _ => None,
    };

    let categories = spec.categories_raw.as_deref().map(|raw| {
        let (parsed, mut category_diags) = parse_categories(raw);
        diagnostics.append(&mut category_diags);
        parsed
            .into_iter()
            .map(|(key, resource)| {
                let resolved = resource.map(|r| {
                    let label = resolver.resolve_label(&r.system, &r.code);
                    r.with_label(label)
                });
                (key, resolved)
            })
            .collect::<CategoryMap>()
    });

    let feature = Feature {
        identifier,
        kind: spec.kind.clone(),
        name: spec.name.clone(),
        ontology_resource,
        data_type: spec.data_type,
        unit: spec.unit.as_deref().map(UnitSpec::parse),
        categories,
        visibility: spec.visibility.unwrap_or_default(),
        visibility_provided: spec.visibility.is_some(),
    };
    (feature, diagnostics)
}
