//! Ontology registry, label resolution, and post-coordinated code parsing.
//!
//! Label resolution is total by design: every failure path (unknown code,
//! timeout, non-success status, empty payload) yields the empty label so the
//! pipeline never stalls on a terminology service. Outcomes are recorded so
//! the report can explain metric E1.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use indexmap::IndexMap;

use crate::error::{Diagnostic, EtlError};

/// Resolves a (system, code) pair to a human-readable label; the empty
/// string means "could not resolve".
pub trait LabelResolver: Sync {
    fn resolve_label(&self, system: &str, code: &str) -> String;
}

/// Resolver that never finds anything. Used by validation passes that must
/// not touch label sources.
pub struct NullResolver;

impl LabelResolver for NullResolver {
    fn resolve_label(&self, _system: &str, _code: &str) -> String {
        String::new()
    }
}

/// Maps ontology names to the base endpoint used when querying them
/// remotely. Lookups ignore case, whitespace, and hyphens so "SNOMED-CT"
/// and "snomed ct" land on the same entry; unknown names pass through
/// verbatim with a warning.
#[derive(Debug, Clone)]
pub struct OntologyRegistry {
    entries: HashMap<String, String>,
}

impl OntologyRegistry {
    fn normalize(name: &str) -> String {
        name.chars()
            .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
            .flat_map(char::to_lowercase)
            .collect()
    }

    /// Registry preloaded with the ontologies the metadata templates use.
    pub fn default_registry() -> Self {
        let mut registry = OntologyRegistry {
            entries: HashMap::new(),
        };
        registry.insert("snomed ct", "http://snomed.info/sct");
        registry.insert("loinc", "https://loinc.org");
        registry.insert("hgnc", "https://www.genenames.org");
        registry.insert("orphanet", "https://www.orpha.net");
        registry
    }

    pub fn insert(&mut self, name: &str, endpoint: &str) {
        self.entries
            .insert(Self::normalize(name), endpoint.to_string());
    }

    pub fn endpoint(&self, name: &str) -> Option<&str> {
        self.entries.get(&Self::normalize(name)).map(String::as_str)
    }

    /// Endpoint for a system, falling back to the name itself (with a
    /// warning) when the ontology is not registered.
    pub fn endpoint_or_verbatim(&self, name: &str) -> (String, Option<Diagnostic>) {
        match self.endpoint(name) {
            Some(url) => (url.to_string(), None),
            None => (
                name.to_string(),
                Some(Diagnostic::warning(format!(
                    "ontology '{name}' is not registered; using the name verbatim"
                ))),
            ),
        }
    }
}

/// In-memory (system, code) → label table, loadable from a three-column TSV.
#[derive(Debug, Default, Clone)]
pub struct StaticLabels {
    rows: HashMap<(String, String), String>,
}

impl StaticLabels {
    pub fn empty() -> Self {
        StaticLabels::default()
    }

    fn key(system: &str, code: &str) -> (String, String) {
        (system.trim().to_lowercase(), code.trim().to_string())
    }

    pub fn insert(&mut self, system: &str, code: &str, label: &str) {
        self.rows
            .insert(Self::key(system, code), label.to_string());
    }

    /// Loads a UTF-8 TSV of (system, code, label) rows. Blank lines and
    /// `#` comments are skipped; rows with fewer than three columns are an
    /// error.
    pub fn from_tsv(path: &Path) -> Result<Self, EtlError> {
        let file = std::fs::File::open(path).map_err(|e| EtlError::io(path, e))?;
        let mut table = StaticLabels::empty();
        for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| EtlError::io(path, e))?;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (system, code, label) = match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(c), Some(l)) => (s, c, l),
                _ => {
                    return Err(EtlError::Manifest(format!(
                        "label table {}: line {} has fewer than 3 tab-separated columns",
                        path.display(),
                        line_no + 1
                    )))
                }
            };
            table.insert(system, code, label.trim());
        }
        Ok(table)
    }

    pub fn get(&self, system: &str, code: &str) -> Option<&str> {
        self.rows
            .get(&Self::key(system, code))
            .map(String::as_str)
    }
}

/// Remote label endpoint: an HTTP GET against a URL template containing
/// `{code}` (and optionally `{system}`). A 2xx response carrying a JSON
/// body with a non-empty `label` field counts as resolved; anything else
/// counts as empty.
#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url_template: String,
    pub timeout: Duration,
    pub auth_token: Option<String>,
}

impl RemoteEndpoint {
    pub fn new(url_template: impl Into<String>, timeout: Duration) -> Self {
        RemoteEndpoint {
            url_template: url_template.into(),
            timeout,
            auth_token: None,
        }
    }

    fn build_url(&self, system_endpoint: &str, code: &str) -> String {
        self.url_template
            .replace("{system}", &percent_encode(system_endpoint))
            .replace("{code}", &percent_encode(code))
    }

    fn query(&self, system_endpoint: &str, code: &str) -> String {
        let url = self.build_url(system_endpoint, code);
        let client = match reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
        {
            Ok(client) => client,
            Err(_) => return String::new(),
        };
        let mut request = client.get(&url);
        if let Some(token) = &self.auth_token {
            request = request.bearer_auth(token);
        }
        let response = match request.send() {
            Ok(response) => response,
            Err(_) => return String::new(),
        };
        if !response.status().is_success() {
            return String::new();
        }
        match response.json::<serde_json::Value>() {
            Ok(body) => body
                .get("label")
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .trim()
                .to_string(),
            Err(_) => String::new(),
        }
    }
}

fn percent_encode(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for byte in raw.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

/// Where labels come from: a static table, a remote endpoint, or a static
/// table with remote fallback.
#[derive(Debug, Clone)]
pub enum LabelSource {
    Static(StaticLabels),
    Remote(RemoteEndpoint),
    Composite {
        table: StaticLabels,
        remote: RemoteEndpoint,
    },
}

/// Resolution outcome kept for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionOutcome {
    pub system: String,
    pub code: String,
    pub resolved: bool,
}

/// The run-wide resolver: caches per (system, code) so repeated codes (the
/// genomic scenario resolves thousands) hit a source at most once, and logs
/// every distinct outcome.
pub struct CachedResolver {
    source: LabelSource,
    registry: OntologyRegistry,
    cache: Mutex<HashMap<(String, String), String>>,
    log: Mutex<IndexMap<(String, String), bool>>,
}

impl CachedResolver {
    pub fn new(source: LabelSource, registry: OntologyRegistry) -> Self {
        CachedResolver {
            source,
            registry,
            cache: Mutex::new(HashMap::new()),
            log: Mutex::new(IndexMap::new()),
        }
    }

    fn resolve_uncached(&self, system: &str, code: &str) -> String {
        match &self.source {
            LabelSource::Static(table) => table.get(system, code).unwrap_or("").to_string(),
            LabelSource::Remote(remote) => {
                let (endpoint, _) = self.registry.endpoint_or_verbatim(system);
                remote.query(&endpoint, code)
            }
            LabelSource::Composite { table, remote } => match table.get(system, code) {
                Some(label) if !label.is_empty() => label.to_string(),
                _ => {
                    let (endpoint, _) = self.registry.endpoint_or_verbatim(system);
                    remote.query(&endpoint, code)
                }
            },
        }
    }

    /// Distinct (system, code, resolved) outcomes in first-seen order.
    pub fn outcomes(&self) -> Vec<ResolutionOutcome> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .map(|((system, code), resolved)| ResolutionOutcome {
                system: system.clone(),
                code: code.clone(),
                resolved: *resolved,
            })
            .collect()
    }

    pub fn unresolved(&self) -> Vec<(String, String)> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, resolved)| !**resolved)
            .map(|((system, code), _)| (system.clone(), code.clone()))
            .collect()
    }
}

impl LabelResolver for CachedResolver {
    fn resolve_label(&self, system: &str, code: &str) -> String {
        if system.is_empty() || code.is_empty() {
            return String::new();
        }
        let key = (system.to_string(), code.to_string());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let label = self.resolve_uncached(system, code);
        self.cache
            .lock()
            .unwrap()
            .insert(key.clone(), label.clone());
        self.log.lock().unwrap().insert(key, !label.is_empty());
        label
    }
}

/// A post-coordinated code: a focus concept refined by attribute=value
/// pairs, e.g. `307294006:246454002=111293003`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostCoordinated {
    pub focus: String,
    pub refinements: Vec<(String, String)>,
}

impl PostCoordinated {
    pub fn bare(focus: impl Into<String>) -> Self {
        PostCoordinated {
            focus: focus.into(),
            refinements: Vec::new(),
        }
    }

    pub fn to_code(&self) -> String {
        let mut out = self.focus.clone();
        for (attribute, value) in &self.refinements {
            out.push(':');
            out.push_str(attribute);
            out.push('=');
            out.push_str(value);
        }
        out
    }
}

/// Parses `focus(":" attr "=" value)*`. Malformed strings come back as an
/// opaque bare focus with a warning; codes always stay usable verbatim.
pub fn parse_post_coordinated(code: &str) -> (PostCoordinated, Option<Diagnostic>) {
    let mut segments = code.split(':');
    let focus = segments.next().unwrap_or_default().trim();
    if focus.is_empty() {
        return (
            PostCoordinated::bare(code),
            Some(Diagnostic::warning(format!(
                "post-coordinated code '{code}' has an empty focus; treating it as opaque"
            ))),
        );
    }
    let mut refinements = Vec::new();
    for segment in segments {
        match segment.split_once('=') {
            Some((attribute, value))
                if !attribute.trim().is_empty() && !value.trim().is_empty() =>
            {
                refinements.push((attribute.trim().to_string(), value.trim().to_string()));
            }
            _ => {
                return (
                    PostCoordinated::bare(code),
                    Some(Diagnostic::warning(format!(
                        "post-coordinated code '{code}' has a malformed refinement '{segment}'; \
                         treating it as opaque"
                    ))),
                );
            }
        }
    }
    (PostCoordinated { focus: focus.to_string(), refinements }, None)
}
