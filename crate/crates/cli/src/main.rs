//! `cohort` — manifest-driven batch integration of tabular health datasets.
//!
//! Exit codes: 0 success, 1 internal error, 2 user/config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cohort_core::error::{EtlError, Severity};
use cohort_core::manifest::RunManifest;
use cohort_core::pipeline;

#[derive(Parser)]
#[command(name = "cohort", version, about = "Integrate heterogeneous tabular health datasets into an interoperable document store and score the result")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run manifest end to end without writing anything.
    Validate { manifest: PathBuf },
    /// Run the full Extract-Transform-Load pipeline and print the report.
    Etl { manifest: PathBuf },
    /// Re-derive the ETL metrics from a store and cross-check the stored report.
    Report {
        store: PathBuf,
        /// Emit the machine-readable report instead of the human table.
        #[arg(long)]
        machine: bool,
    },
    /// Print documents of one store collection as JSON lines.
    Inspect {
        store: PathBuf,
        collection: String,
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn print_diagnostics(diagnostics: &[cohort_core::Diagnostic]) {
    for diagnostic in diagnostics {
        eprintln!("{diagnostic}");
    }
}

fn cmd_validate(manifest_path: &Path) -> Result<ExitCode, EtlError> {
    let manifest = RunManifest::load(manifest_path)?;
    let outcome = pipeline::run_validate(&manifest)?;
    print_diagnostics(&outcome.diagnostics);
    println!(
        "{} features, {} datasets",
        outcome.feature_count, outcome.dataset_count
    );
    println!("\nprospective metrics:");
    for metric in &outcome.prospective {
        println!("{}", metric.human_row());
    }
    let has_errors = outcome
        .diagnostics
        .iter()
        .any(|d| d.severity == Severity::Error);
    Ok(if has_errors {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_etl(manifest_path: &Path) -> Result<ExitCode, EtlError> {
    let manifest = RunManifest::load(manifest_path)?;
    let outcome = pipeline::run_etl(&manifest)?;
    print_diagnostics(&outcome.diagnostics);
    let s = outcome.inserted;
    println!(
        "patients: {} inserted, {} skipped",
        s.patients.inserted, s.patients.skipped
    );
    println!(
        "features: {} inserted, {} skipped",
        s.features.inserted, s.features.skipped
    );
    println!(
        "records: {} inserted, {} skipped",
        s.records.inserted, s.records.skipped
    );
    println!("store: {}", outcome.store_root.display());
    println!("report: {}\n", outcome.report_path.display());
    println!("{}", outcome.report.render_human());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(store: &Path, machine: bool) -> Result<ExitCode, EtlError> {
    let outcome = pipeline::run_report(store)?;
    if outcome.dirty {
        eprintln!(
            "WARNING: store is marked dirty ({}); the report may be incomplete",
            outcome.dirty_reason.as_deref().unwrap_or("no reason recorded")
        );
    }
    for divergence in &outcome.divergences {
        eprintln!("divergence: {divergence}");
    }
    if machine {
        println!("{}", outcome.recomputed.to_machine_json());
    } else {
        if outcome.stored.is_none() {
            eprintln!("note: no stored report found; showing store-derived values only");
        }
        println!("{}", outcome.recomputed.render_human());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(
    store: &Path,
    collection: &str,
    limit: Option<usize>,
) -> Result<ExitCode, EtlError> {
    for line in pipeline::run_inspect(store, collection, limit)? {
        println!("{line}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { manifest } => cmd_validate(manifest),
        Command::Etl { manifest } => cmd_etl(manifest),
        Command::Report { store, machine } => cmd_report(store, *machine),
        Command::Inspect {
            store,
            collection,
            limit,
        } => cmd_inspect(store, collection, *limit),
    };
    match result {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
