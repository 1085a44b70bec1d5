//! The run manifest: one TOML document declaring the hospital, the metadata
//! file, the datasets, and the ontology/transform configuration for a run.
//!
//! Environment variables (e.g. terminology auth tokens) are referenced by
//! name in the manifest rather than read implicitly, so runs stay auditable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::cdm::DataKind;
use crate::error::EtlError;
use crate::ingest::{DatasetDescriptor, EmptyMarkers};
use crate::terminology::{
    CachedResolver, LabelSource, OntologyRegistry, RemoteEndpoint, StaticLabels,
};
use crate::transform::TransformConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default = "default_manifest_version")]
    pub manifest_version: u32,
    pub hospital: String,
    pub metadata: PathBuf,
    pub store_root: PathBuf,
    #[serde(default)]
    pub report_path: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub ontology: OntologyConfig,
    #[serde(default)]
    pub transform: TransformSection,
}

fn default_manifest_version() -> u32 {
    MANIFEST_VERSION
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    pub kind: String,
    pub patient_id_column: String,
    #[serde(default)]
    pub sample_id_column: Option<String>,
    #[serde(default)]
    pub artifact_path_column: Option<String>,
    #[serde(default)]
    pub requires_dedicated_extraction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSourceKind {
    #[default]
    Static,
    Remote,
    Composite,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OntologyConfig {
    #[serde(default)]
    pub label_source: LabelSourceKind,
    #[serde(default)]
    pub static_table: Option<PathBuf>,
    #[serde(default)]
    pub endpoint_template: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default)]
    pub registry: BTreeMap<String, String>,
}

fn default_timeout_ms() -> u64 {
    3000
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TransformSection {
    #[serde(default)]
    pub date_formats: Option<Vec<String>>,
    #[serde(default)]
    pub datetime_formats: Option<Vec<String>>,
    #[serde(default)]
    pub empty_markers: Option<Vec<String>>,
    #[serde(default)]
    pub boolean_true: Option<Vec<String>>,
    #[serde(default)]
    pub boolean_false: Option<Vec<String>>,
    #[serde(default)]
    pub genomic_top_k: Option<usize>,
}

impl RunManifest {
    /// Loads a manifest and resolves every relative path against the
    /// manifest file's directory.
    pub fn load(path: &Path) -> Result<RunManifest, EtlError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            EtlError::Manifest(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut manifest: RunManifest = toml::from_str(&raw)
            .map_err(|e| EtlError::Manifest(format!("{}: {e}", path.display())))?;
        if manifest.manifest_version != MANIFEST_VERSION {
            return Err(EtlError::Manifest(format!(
                "unsupported manifestVersion {}",
                manifest.manifest_version
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        anchor(&mut manifest.metadata);
        anchor(&mut manifest.store_root);
        if let Some(report) = manifest.report_path.as_mut() {
            anchor(report);
        }
        if let Some(table) = manifest.ontology.static_table.as_mut() {
            anchor(table);
        }
        for dataset in &mut manifest.datasets {
            anchor(&mut dataset.path);
        }
        manifest.check()?;
        Ok(manifest)
    }

    fn check(&self) -> Result<(), EtlError> {
        if self.hospital.trim().is_empty() {
            return Err(EtlError::Manifest("hospital name must be non-empty".into()));
        }
        if self.datasets.is_empty() {
            return Err(EtlError::Manifest("manifest declares no datasets".into()));
        }
        let mut names = std::collections::HashSet::new();
        for dataset in &self.datasets {
            if !names.insert(dataset.name.as_str()) {
                return Err(EtlError::Manifest(format!(
                    "duplicate dataset name '{}'",
                    dataset.name
                )));
            }
        }
        match self.ontology.label_source {
            LabelSourceKind::Remote | LabelSourceKind::Composite
                if self.ontology.endpoint_template.is_none() =>
            {
                return Err(EtlError::Manifest(
                    "remote label source requires ontology.endpointTemplate".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Verifies that every referenced input path exists.
    pub fn check_paths(&self) -> Result<(), EtlError> {
        let mut missing = Vec::new();
        if !self.metadata.exists() {
            missing.push(format!("metadata file {}", self.metadata.display()));
        }
        for dataset in &self.datasets {
            if !dataset.path.exists() {
                missing.push(format!(
                    "dataset '{}' path {}",
                    dataset.name,
                    dataset.path.display()
                ));
            }
        }
        if let Some(table) = &self.ontology.static_table {
            if !table.exists() {
                missing.push(format!("static label table {}", table.display()));
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EtlError::Manifest(format!(
                "missing input paths: {}",
                missing.join("; ")
            )))
        }
    }

    pub fn descriptors(&self) -> Vec<DatasetDescriptor> {
        self.datasets
            .iter()
            .map(|d| DatasetDescriptor {
                name: d.name.clone(),
                path: d.path.clone(),
                kind: DataKind::parse(&d.kind).0,
                patient_id_column: d.patient_id_column.clone(),
                sample_id_column: d.sample_id_column.clone(),
                artifact_path_column: d.artifact_path_column.clone(),
                requires_dedicated_extraction: d.requires_dedicated_extraction,
            })
            .collect()
    }

    pub fn transform_config(&self) -> TransformConfig {
        let mut config = TransformConfig::default();
        let section = &self.transform;
        if let Some(formats) = &section.date_formats {
            config.date_formats = formats.clone();
        }
        if let Some(formats) = &section.datetime_formats {
            config.datetime_formats = formats.clone();
        }
        if let Some(markers) = &section.empty_markers {
            config.empty_markers = EmptyMarkers::new(markers.iter().cloned());
        }
        if let Some(tokens) = &section.boolean_true {
            config.boolean_true = tokens.clone();
        }
        if let Some(tokens) = &section.boolean_false {
            config.boolean_false = tokens.clone();
        }
        config.genomic_top_k = section.genomic_top_k;
        config
    }

    pub fn registry(&self) -> OntologyRegistry {
        let mut registry = OntologyRegistry::default_registry();
        for (name, endpoint) in &self.ontology.registry {
            registry.insert(name, endpoint);
        }
        registry
    }

    /// Builds the run-wide label resolver declared by the ontology section.
    pub fn build_resolver(&self) -> Result<CachedResolver, EtlError> {
        let table = match &self.ontology.static_table {
            Some(path) => StaticLabels::from_tsv(path)?,
            None => StaticLabels::empty(),
        };
        let remote = || -> Result<RemoteEndpoint, EtlError> {
            let template = self.ontology.endpoint_template.clone().ok_or_else(|| {
                EtlError::Manifest("remote label source requires ontology.endpointTemplate".into())
            })?;
            let mut endpoint =
                RemoteEndpoint::new(template, Duration::from_millis(self.ontology.timeout_ms));
            if let Some(var) = &self.ontology.auth_token_env {
                endpoint.auth_token = std::env::var(var).ok();
            }
            Ok(endpoint)
        };
        let source = match self.ontology.label_source {
            LabelSourceKind::Static => LabelSource::Static(table),
            LabelSourceKind::Remote => LabelSource::Remote(remote()?),
            LabelSourceKind::Composite => LabelSource::Composite {
                table,
                remote: remote()?,
            },
        };
        Ok(CachedResolver::new(source, self.registry()))
    }
}
