//! The Load step: a file-backed document store with one JSON-Lines
//! collection per entity, identifier and foreign-key indexes, and a
//! versioned manifest holding counters, run metadata, and collection
//! checksums.
//!
//! Documents are serialized canonically (sorted keys) so collection files
//! are diffable and two identical runs produce byte-identical collections.
//! The patient alias table lives beside the collections but is local-only:
//! it is never part of an export bundle.
//!
//! An adapter seam is deliberately kept thin — everything goes through
//! `insert_many` / `build_indexes` / `resolve_ref` — so an external document
//! database could be swapped in behind the same operations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdm::{AliasTable, CounterState, DataKind};
use crate::error::EtlError;

pub const LAYOUT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ALIASES_FILE: &str = "aliases.json";
pub const COLLECTIONS_DIR: &str = "collections";
pub const INDEXES_DIR: &str = "indexes";
pub const REPORT_FILE: &str = "interop-report.json";

/// A flat document, one per line in a collection file.
pub type Document = serde_json::Map<String, serde_json::Value>;

/// Serializes any model value into a canonical document.
pub fn to_document<T: Serialize>(value: &T) -> Result<Document, EtlError> {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::Object(map)) => Ok(map),
        Ok(_) => Err(EtlError::Store("value is not a JSON object".into())),
        Err(e) => Err(EtlError::Store(format!("serialize: {e}"))),
    }
}

pub fn feature_collection(kind: &DataKind) -> String {
    format!("feature-{}", kind.collection_suffix())
}

pub fn record_collection(kind: &DataKind) -> String {
    format!("record-{}", kind.collection_suffix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Hospital,
    Patient,
    Feature,
}

/// One-shot snapshot of the identifier sets used for reference resolution.
#[derive(Debug)]
pub struct RefSets<'a> {
    hospital: HashSet<&'a str>,
    patient: HashSet<&'a str>,
    feature: HashSet<&'a str>,
}

impl RefSets<'_> {
    pub fn resolve(&self, ref_kind: RefKind, id: &str) -> bool {
        match ref_kind {
            RefKind::Hospital => self.hospital.contains(id),
            RefKind::Patient => self.patient.contains(id),
            RefKind::Feature => self.feature.contains(id),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
struct CounterSnapshot {
    patient: u64,
    feature: u64,
    record: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollectionInfo {
    pub count: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunInfo {
    pub timestamp: String,
    pub hospital: String,
    pub inserted_records: u64,
    pub skipped_records: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct StoreManifest {
    layout_version: u32,
    counters: CounterSnapshot,
    /// Stable (kind → name → identifier) feature assignment so re-runs
    /// materialize the same feature ids and record dedup keys stay valid.
    #[serde(default)]
    feature_ids: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    dirty: bool,
    #[serde(default)]
    dirty_reason: Option<String>,
    #[serde(default)]
    collections: BTreeMap<String, CollectionInfo>,
    #[serde(default)]
    runs: Vec<RunInfo>,
}

impl Default for StoreManifest {
    fn default() -> Self {
        StoreManifest {
            layout_version: LAYOUT_VERSION,
            counters: CounterSnapshot::default(),
            feature_ids: BTreeMap::new(),
            dirty: false,
            dirty_reason: None,
            collections: BTreeMap::new(),
            runs: Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
struct CollectionState {
    /// identifier → hash of canonical content, for duplicate detection.
    ids: HashMap<String, u64>,
    /// Record collections only: content keys already present.
    content_keys: HashSet<String>,
    count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertOutcome {
    pub inserted: u64,
    pub skipped: u64,
}

#[derive(Debug, Default, Serialize)]
pub struct IndexStats {
    /// Collection → identifier-index entry count.
    pub id_entries: BTreeMap<String, u64>,
    /// Record collection → (ref field → distinct key count).
    pub fk_entries: BTreeMap<String, BTreeMap<String, u64>>,
    /// Ref field → record identifiers whose reference does not resolve.
    pub unresolved: BTreeMap<String, Vec<String>>,
}

impl IndexStats {
    /// Distinct keys of one foreign-key field summed over all record
    /// collections.
    pub fn fk_keys(&self, field: &str) -> u64 {
        self.fk_entries
            .values()
            .filter_map(|by_field| by_field.get(field))
            .sum()
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: StoreManifest,
    collections: HashMap<String, CollectionState>,
    warnings: Vec<String>,
}

fn content_hash(line: &str) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    line.hash(&mut hasher);
    hasher.finish()
}

/// Dedup key for record documents: identifiers are re-allocated on every
/// run, so equality is judged on (patientRef, featureRef, dataset, value).
fn record_content_key(doc: &Document) -> String {
    let pick = |field: &str| doc.get(field).cloned().unwrap_or(serde_json::Value::Null);
    serde_json::to_string(&vec![
        pick("patientRef"),
        pick("featureRef"),
        pick("dataset"),
        pick("value"),
    ])
    .unwrap_or_default()
}

fn canonical_line(doc: &Document) -> String {
    // serde_json maps are sorted by key, so this is canonical as-is.
    serde_json::to_string(doc).expect("document serialization cannot fail")
}

impl Store {
    /// Opens (or creates) a store rooted at `root`. A fresh store starts
    /// with all counters at zero; an existing manifest that fails to parse
    /// is a corrupt store.
    pub fn init(root: &Path) -> Result<Store, EtlError> {
        if root.exists() && !root.is_dir() {
            return Err(EtlError::CorruptStore {
                root: root.to_path_buf(),
                reason: "store root is not a directory".into(),
            });
        }
        std::fs::create_dir_all(root.join(COLLECTIONS_DIR)).map_err(|e| EtlError::io(root, e))?;
        std::fs::create_dir_all(root.join(INDEXES_DIR)).map_err(|e| EtlError::io(root, e))?;

        let manifest_path = root.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let raw = std::fs::read_to_string(&manifest_path)
                .map_err(|e| EtlError::io(&manifest_path, e))?;
            let manifest: StoreManifest =
                serde_json::from_str(&raw).map_err(|e| EtlError::CorruptStore {
                    root: root.to_path_buf(),
                    reason: format!("manifest does not parse: {e}"),
                })?;
            if manifest.layout_version != LAYOUT_VERSION {
                return Err(EtlError::CorruptStore {
                    root: root.to_path_buf(),
                    reason: format!("unsupported layoutVersion {}", manifest.layout_version),
                });
            }
            manifest
        } else {
            let manifest = StoreManifest::default();
            write_json(&manifest_path, &manifest)?;
            manifest
        };

        let mut store = Store {
            root: root.to_path_buf(),
            manifest,
            collections: HashMap::new(),
            warnings: Vec::new(),
        };
        store.load_collection_states()?;
        Ok(store)
    }

    fn load_collection_states(&mut self) -> Result<(), EtlError> {
        let dir = self.root.join(COLLECTIONS_DIR);
        let entries = std::fs::read_dir(&dir).map_err(|e| EtlError::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| EtlError::io(&dir, e))?;
            let file_name = entry.file_name().to_string_lossy().to_string();
            let Some(name) = file_name.strip_suffix(".jsonl") else {
                continue;
            };
            let mut state = CollectionState::default();
            let is_record = name.starts_with("record-");
            for doc in read_documents(&entry.path())? {
                let line = canonical_line(&doc);
                if let Some(id) = doc.get("identifier").and_then(|v| v.as_str()) {
                    state.ids.insert(id.to_string(), content_hash(&line));
                }
                if is_record {
                    state.content_keys.insert(record_content_key(&doc));
                }
                state.count += 1;
            }
            self.collections.insert(name.to_string(), state);
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_dirty(&self) -> bool {
        self.manifest.dirty
    }

    pub fn dirty_reason(&self) -> Option<&str> {
        self.manifest.dirty_reason.as_deref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunInfo> {
        self.manifest.runs.iter()
    }

    /// Counter state resumed from the manifest.
    pub fn counters(&self) -> CounterState {
        let c = &self.manifest.counters;
        CounterState::new(c.patient, c.feature, c.record)
    }

    /// Stable feature identifier for (kind, name): reuses the assignment of
    /// previous runs, allocating a fresh id only for unseen features.
    pub fn feature_identifier(
        &mut self,
        kind: &DataKind,
        name: &str,
        counters: &CounterState,
    ) -> String {
        let by_name = self
            .manifest
            .feature_ids
            .entry(kind.as_label().to_string())
            .or_default();
        if let Some(existing) = by_name.get(name) {
            return existing.clone();
        }
        let id = counters.next_feature_id();
        by_name.insert(name.to_string(), id.clone());
        id
    }

    pub fn load_aliases(&self) -> Result<AliasTable, EtlError> {
        let path = self.root.join(ALIASES_FILE);
        if !path.exists() {
            return Ok(AliasTable::new());
        }
        let raw = std::fs::read_to_string(&path).map_err(|e| EtlError::io(&path, e))?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&raw).map_err(|e| EtlError::CorruptStore {
                root: self.root.clone(),
                reason: format!("alias table does not parse: {e}"),
            })?;
        Ok(AliasTable::from_entries(entries))
    }

    pub fn persist_aliases(&self, aliases: &AliasTable) -> Result<(), EtlError> {
        let map: BTreeMap<String, String> = aliases.entries().into_iter().collect();
        write_json(&self.root.join(ALIASES_FILE), &map)
    }

    fn collection_path(&self, name: &str) -> PathBuf {
        self.root.join(COLLECTIONS_DIR).join(format!("{name}.jsonl"))
    }

    /// Append-only insert. Duplicate identifiers are skipped (value-identical
    /// duplicates silently, conflicting ones with a warning); record
    /// documents additionally dedup on their content key so re-runs are
    /// no-ops. I/O failure marks the store dirty.
    pub fn insert_many(
        &mut self,
        collection: &str,
        docs: &[Document],
    ) -> Result<InsertOutcome, EtlError> {
        let mut outcome = InsertOutcome::default();
        if docs.is_empty() {
            return Ok(outcome);
        }
        let is_record = collection.starts_with("record-");
        let path = self.collection_path(collection);

        let mut lines = Vec::new();
        {
            let state = self.collections.entry(collection.to_string()).or_default();
            for doc in docs {
                let Some(id) = doc.get("identifier").and_then(|v| v.as_str()) else {
                    return Err(EtlError::Store(format!(
                        "document for collection '{collection}' has no identifier"
                    )));
                };
                let line = canonical_line(doc);
                let hash = content_hash(&line);
                if let Some(existing) = state.ids.get(id) {
                    if *existing != hash {
                        self.warnings.push(format!(
                            "collection '{collection}': identifier '{id}' re-inserted with \
                             different content; keeping the existing document"
                        ));
                    }
                    outcome.skipped += 1;
                    continue;
                }
                if is_record {
                    let key = record_content_key(doc);
                    if !state.content_keys.insert(key) {
                        outcome.skipped += 1;
                        continue;
                    }
                }
                state.ids.insert(id.to_string(), hash);
                state.count += 1;
                outcome.inserted += 1;
                lines.push(line);
            }
        }

        if !lines.is_empty() {
            let result = (|| -> std::io::Result<()> {
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)?;
                let mut writer = std::io::BufWriter::new(&mut file);
                for line in &lines {
                    writer.write_all(line.as_bytes())?;
                    writer.write_all(b"\n")?;
                }
                writer.flush()
            })();
            if let Err(e) = result {
                let _ = self.mark_dirty(&format!("write failure on collection '{collection}'"));
                return Err(EtlError::io(&path, e));
            }
        }
        Ok(outcome)
    }

    pub fn collection_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.collections.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn collection_count(&self, name: &str) -> u64 {
        self.collections.get(name).map(|s| s.count).unwrap_or(0)
    }

    pub fn read_collection(&self, name: &str) -> Result<Vec<Document>, EtlError> {
        let path = self.collection_path(name);
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_documents(&path)
    }

    fn id_set(&self, ref_kind: RefKind) -> HashSet<&str> {
        let mut ids = HashSet::new();
        for (name, state) in &self.collections {
            let relevant = match ref_kind {
                RefKind::Hospital => name == "hospital",
                RefKind::Patient => name == "patient",
                RefKind::Feature => name.starts_with("feature-"),
            };
            if relevant {
                ids.extend(state.ids.keys().map(String::as_str));
            }
        }
        ids
    }

    /// Membership test against the identifier indexes. For bulk membership
    /// checks use [`Store::ref_sets`], which builds each set once.
    pub fn resolve_ref(&self, ref_kind: RefKind, id: &str) -> bool {
        self.id_set(ref_kind).contains(id)
    }

    /// Snapshot of the hospital/patient/feature identifier sets for bulk
    /// reference resolution.
    pub fn ref_sets(&self) -> RefSets<'_> {
        RefSets {
            hospital: self.id_set(RefKind::Hospital),
            patient: self.id_set(RefKind::Patient),
            feature: self.id_set(RefKind::Feature),
        }
    }

    /// Writes identifier indexes for every collection and foreign-key
    /// indexes for record collections; returns entry counts and any
    /// unresolved references (these feed metrics E5–E7).
    pub fn build_indexes(&mut self) -> Result<IndexStats, EtlError> {
        let mut stats = IndexStats::default();
        let names = self.collection_names();

        for name in &names {
            let docs = self.read_collection(name)?;
            let mut id_index: BTreeMap<String, u64> = BTreeMap::new();
            for (line_no, doc) in docs.iter().enumerate() {
                if let Some(id) = doc.get("identifier").and_then(|v| v.as_str()) {
                    id_index.insert(id.to_string(), line_no as u64);
                }
            }
            stats
                .id_entries
                .insert(name.clone(), id_index.len() as u64);
            write_json(
                &self.root.join(INDEXES_DIR).join(format!("{name}.ids.json")),
                &id_index,
            )?;
        }

        let ref_fields = [
            ("hospitalRef", RefKind::Hospital),
            ("patientRef", RefKind::Patient),
            ("featureRef", RefKind::Feature),
        ];
        let ref_sets = self.ref_sets();
        for name in names.iter().filter(|n| n.starts_with("record-")) {
            let docs = self.read_collection(name)?;
            let mut fk_index: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
            for doc in &docs {
                let record_id = doc
                    .get("identifier")
                    .and_then(|v| v.as_str())
                    .unwrap_or_default()
                    .to_string();
                for (field, ref_kind) in ref_fields {
                    let Some(target) = doc.get(field).and_then(|v| v.as_str()) else {
                        continue;
                    };
                    fk_index
                        .entry(field.to_string())
                        .or_default()
                        .entry(target.to_string())
                        .or_default()
                        .push(record_id.clone());
                    if !ref_sets.resolve(ref_kind, target) {
                        stats
                            .unresolved
                            .entry(field.to_string())
                            .or_default()
                            .push(record_id.clone());
                    }
                }
            }
            let per_field: BTreeMap<String, u64> = fk_index
                .iter()
                .map(|(field, keys)| (field.clone(), keys.len() as u64))
                .collect();
            stats.fk_entries.insert(name.clone(), per_field);
            write_json(
                &self.root.join(INDEXES_DIR).join(format!("{name}.refs.json")),
                &fk_index,
            )?;
        }
        Ok(stats)
    }

    pub fn mark_dirty(&mut self, reason: &str) -> Result<(), EtlError> {
        self.manifest.dirty = true;
        self.manifest.dirty_reason = Some(reason.to_string());
        write_json(&self.root.join(MANIFEST_FILE), &self.manifest)
    }

    fn refresh_checksums(&mut self) -> Result<(), EtlError> {
        let mut collections = BTreeMap::new();
        for name in self.collection_names() {
            let path = self.collection_path(&name);
            let bytes = std::fs::read(&path).map_err(|e| EtlError::io(&path, e))?;
            let digest = Sha256::digest(&bytes);
            let sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            collections.insert(
                name.clone(),
                CollectionInfo {
                    count: self.collection_count(&name),
                    sha256,
                },
            );
        }
        self.manifest.collections = collections;
        Ok(())
    }

    /// Persists counters (and the feature id map) mid-run, marking the
    /// store dirty until the run completes; a crash between this point and
    /// [`Store::finalize_run`] leaves counters safely ahead of any document
    /// actually written.
    pub fn begin_load(&mut self, counters: &CounterState) -> Result<(), EtlError> {
        let (patient, feature, record) = counters.snapshot();
        self.manifest.counters = CounterSnapshot {
            patient,
            feature,
            record,
        };
        self.manifest.dirty = true;
        self.manifest.dirty_reason = Some("load in progress".into());
        write_json(&self.root.join(MANIFEST_FILE), &self.manifest)
    }

    /// Completes a run: refreshes checksums, clears the dirty flag, and
    /// appends the run summary.
    pub fn finalize_run(&mut self, counters: &CounterState, run: RunInfo) -> Result<(), EtlError> {
        let (patient, feature, record) = counters.snapshot();
        self.manifest.counters = CounterSnapshot {
            patient,
            feature,
            record,
        };
        self.refresh_checksums()?;
        self.manifest.dirty = false;
        self.manifest.dirty_reason = None;
        self.manifest.runs.push(run);
        write_json(&self.root.join(MANIFEST_FILE), &self.manifest)
    }

    /// Copies manifest, collections, indexes, and the stored report into
    /// `dest`. The alias table is local-only and never exported.
    pub fn export_bundle(&self, dest: &Path) -> Result<(), EtlError> {
        std::fs::create_dir_all(dest.join(COLLECTIONS_DIR)).map_err(|e| EtlError::io(dest, e))?;
        std::fs::create_dir_all(dest.join(INDEXES_DIR)).map_err(|e| EtlError::io(dest, e))?;
        let copy = |from: &Path, to: &Path| -> Result<(), EtlError> {
            std::fs::copy(from, to)
                .map(|_| ())
                .map_err(|e| EtlError::io(from, e))
        };
        copy(
            &self.root.join(MANIFEST_FILE),
            &dest.join(MANIFEST_FILE),
        )?;
        let report = self.root.join(REPORT_FILE);
        if report.exists() {
            copy(&report, &dest.join(REPORT_FILE))?;
        }
        for dir in [COLLECTIONS_DIR, INDEXES_DIR] {
            let source_dir = self.root.join(dir);
            for entry in std::fs::read_dir(&source_dir).map_err(|e| EtlError::io(&source_dir, e))?
            {
                let entry = entry.map_err(|e| EtlError::io(&source_dir, e))?;
                if entry.path().is_file() {
                    copy(&entry.path(), &dest.join(dir).join(entry.file_name()))?;
                }
            }
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EtlError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| EtlError::Store(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, body + "\n").map_err(|e| EtlError::io(path, e))
}

fn read_documents(path: &Path) -> Result<Vec<Document>, EtlError> {
    let file = std::fs::File::open(path).map_err(|e| EtlError::io(path, e))?;
    let mut docs = Vec::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EtlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| EtlError::Store(format!(
            "{}: line {} does not parse: {e}",
            path.display(),
            line_no + 1
        )))?;
        docs.push(doc);
    }
    Ok(docs)
}
