use std::io::Write;

use super::{TrainData, TrainError};
use crate::model::EgeanModel;

/// Writes one CSV row per sample and variant:
/// `sample_id, variant, click, e0, e1, ...`. Variants are `shared` and
/// `cvr`.
pub fn export_embeddings<W: Write>(model: &EgeanModel, data: &TrainData, out: W) -> Result<(), TrainError> {
    let n = data.len();
    let width = model.embedding_width();
    let (shared, cvr) = model.embeddings(&data.codes(), n, 2048)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "variant".into(), "click".into()];
    header.extend((0..width).map(|k| format!("e{k}")));
    w.write_record(&header).map_err(|e| TrainError::Io(e.to_string()))?;
    for (variant, values) in [("shared", &shared), ("cvr", &cvr)] {
        for i in 0..n {
            let mut row = vec![i.to_string(), variant.to_string(), u8::from(data.records[i].click).to_string()];
            row.extend(values[i * width..(i + 1) * width].iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| TrainError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| TrainError::Io(e.to_string()))
}
