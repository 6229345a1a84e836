//! Integer-coded impression logs: schema, CSV loading, batching and
//! in-batch negative sampling.

mod batch;
mod io;
mod schema;

pub use batch::{in_batch_negatives, make_batches, sequential_batches, Batch, ExposureBatch, NEGATIVE_RETRIES};
pub use io::{load_dataset, read_dataset, write_dataset, DatasetManifest, InteractionRecord};
pub use schema::{FieldSpec, Schema, Side, CLICK_COLUMN, CONVERSION_COLUMN};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: conversion without click")]
    Funnel { line: u64 },
    #[error("line {line}: code {code} of `{field}` outside vocabulary of {vocab}")]
    UnknownCode {
        line: u64,
        field: String,
        code: u32,
        vocab: usize,
    },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => DataError::Malformed {
                line: p.line(),
                message: e.to_string(),
            },
            None => DataError::Csv(e.to_string()),
        }
    }
}
