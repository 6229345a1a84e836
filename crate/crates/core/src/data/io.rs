use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Schema};

/// One impression with its funnel outcome.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub codes: Vec<u32>,
    pub click: bool,
    pub conversion: bool,
}

impl InteractionRecord {
    pub fn user_id(&self, schema: &Schema) -> u32 {
        self.codes[schema.user_id_index()]
    }

    pub fn item_id(&self, schema: &Schema) -> u32 {
        self.codes[schema.item_id_index()]
    }
}

/// Dataset statistics in funnel order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub users: usize,
    pub items: usize,
    pub exposures: usize,
    pub clicks: usize,
    pub conversions: usize,
    pub vocab: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub fn compute(schema: &Schema, records: &[InteractionRecord]) -> Self {
        let users: HashSet<u32> = records.iter().map(|r| r.user_id(schema)).collect();
        let items: HashSet<u32> = records.iter().map(|r| r.item_id(schema)).collect();
        Self {
            users: users.len(),
            items: items.len(),
            exposures: records.len(),
            clicks: records.iter().filter(|r| r.click).count(),
            conversions: records.iter().filter(|r| r.conversion).count(),
            vocab: schema.fields().iter().map(|f| (f.name.clone(), f.vocab)).collect(),
        }
    }
}

fn parse_flag(s: &str, line: u64, column: &str) -> Result<bool, DataError> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(DataError::Malformed {
            line,
            message: format!("`{column}` must be 0 or 1, got `{other}`"),
        }),
    }
}

/// Streams and validates a comma-separated dataset whose header matches
/// `schema`.
pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<(Vec<InteractionRecord>, DatasetManifest), DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = schema.header();
    if header != expected {
        return Err(DataError::Header {
            expected: expected.join(","),
            found: header.join(","),
        });
    }
    let nf = schema.len();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != nf + 2 {
            return Err(DataError::Malformed {
                line,
                message: format!("expected {} columns, found {}", nf + 2, row.len()),
            });
        }
        let mut codes = Vec::with_capacity(nf);
        for (k, field) in schema.fields().iter().enumerate() {
            let raw = row[k].trim();
            let code: u32 = raw.parse().map_err(|_| DataError::Malformed {
                line,
                message: format!("`{}` is not a non-negative integer: `{raw}`", field.name),
            })?;
            if code as usize >= field.vocab {
                return Err(DataError::UnknownCode {
                    line,
                    field: field.name.clone(),
                    code,
                    vocab: field.vocab,
                });
            }
            codes.push(code);
        }
        let click = parse_flag(&row[nf], line, super::CLICK_COLUMN)?;
        let conversion = parse_flag(&row[nf + 1], line, super::CONVERSION_COLUMN)?;
        if conversion && !click {
            return Err(DataError::Funnel { line });
        }
        records.push(InteractionRecord {
            codes,
            click,
            conversion,
        });
    }
    let manifest = DatasetManifest::compute(schema, &records);
    Ok((records, manifest))
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<(Vec<InteractionRecord>, DatasetManifest), DataError> {
    let f = File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(f), schema)
}

pub fn write_dataset<W: Write>(out: W, schema: &Schema, records: &[InteractionRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.header())?;
    let mut row: Vec<String> = Vec::with_capacity(schema.len() + 2);
    for r in records {
        row.clear();
        row.extend(r.codes.iter().map(u32::to_string));
        row.push(u8::from(r.click).to_string());
        row.push(u8::from(r.conversion).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}
