//! Interoperability-aware ETL for heterogeneous tabular health datasets.
//!
//! The pipeline reads expert-authored metadata plus any number of tabular
//! datasets, builds a pseudonymized document store shaped by a common data
//! model (hospital / patient / feature / record), and scores the result
//! with fourteen interoperability metrics reported both human- and
//! machine-readably.

pub mod cdm;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod metadata;
pub mod metrics;
pub mod pipeline;
pub mod store;
pub mod terminology;
pub mod transform;

pub use cdm::{
    AliasTable, CounterState, DataKind, DataType, Feature, Hospital, OntologyResource, Patient,
    Record, RecordValue, Visibility,
};
pub use error::{Diagnostic, EtlError, Severity};
pub use manifest::RunManifest;
pub use metrics::{InteropReport, Level, MetricId, MetricResult};
pub use store::Store;
