//! Event files, batch runs and report emission.

mod emit;
mod event_file;
mod run;

pub mod cli;

pub use emit::{emit_reports, emit_sweep, write_json, Format};
pub use event_file::{format_events, parse_event_file, parse_events, write_event_file, EventRecord, ReferenceValues};
pub use run::{
    percentile, run_batch, run_single, run_sweep, Aggregates, BatchReport, EntryStatus, ImpulseRow, RunEntry,
    RunSettings, SweepKind, SweepReport, SweepRow, Summary,
};

use thiserror::Error;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("event '{id}': {message}")]
    Validation { id: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
