//! Text checkpoint: a version line, the seed, model config and schema as
//! JSON, then one header line and one value line per parameter.

use std::io::{BufRead, Write};

use super::{EgeanModel, ModelConfig, ModelError};
use crate::data::Schema;

pub const CHECKPOINT_HEADER: &str = "EGEAN-CKPT-1";

fn ckpt_err(line: usize, msg: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(format!("line {line}: {msg}"))
}

pub fn write_checkpoint<W: Write>(model: &EgeanModel, mut out: W) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Io(e.to_string());
    let cfg = serde_json::to_string(model.config()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let schema = serde_json::to_string(model.schema()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    writeln!(out, "{CHECKPOINT_HEADER}").map_err(io)?;
    writeln!(out, "seed {}", model.seed()).map_err(io)?;
    writeln!(out, "config {}", cfg).map_err(io)?;
    writeln!(out, "schema {}", schema).map_err(io)?;
    writeln!(out, "params {}", model.store().len()).map_err(io)?;
    for (_, name, t) in model.store().iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(out, "param {name} {} {}", u8::from(t.trainable()), dims.join(" ")).map_err(io)?;
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", vals.join(" ")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<EgeanModel, ModelError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = || -> Result<(usize, String), ModelError> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i, l)),
            Some((_, Err(e))) => Err(ModelError::Io(e.to_string())),
            None => Err(ModelError::Checkpoint("unexpected end of file".into())),
        }
    };
    let tagged = |(i, l): (usize, String), tag: &str| -> Result<(usize, String), ModelError> {
        l.strip_prefix(tag)
            .and_then(|r| r.strip_prefix(' '))
            .map(|r| (i, r.to_string()))
            .ok_or_else(|| ckpt_err(i, format!("expected `{tag}`")))
    };

    let (i, head) = next()?;
    if head != CHECKPOINT_HEADER {
        return Err(ckpt_err(i, format!("unknown header `{head}`")));
    }
    let (i, seed) = tagged(next()?, "seed")?;
    let seed: u64 = seed.parse().map_err(|e| ckpt_err(i, e))?;
    let (i, cfg) = tagged(next()?, "config")?;
    let config: ModelConfig = serde_json::from_str(&cfg).map_err(|e| ckpt_err(i, e))?;
    let (i, sch) = tagged(next()?, "schema")?;
    let schema: Schema = serde_json::from_str(&sch).map_err(|e| ckpt_err(i, e))?;
    let (i, count) = tagged(next()?, "params")?;
    let count: usize = count.parse().map_err(|e| ckpt_err(i, e))?;

    let mut model = EgeanModel::new(config, schema, seed)?;
    if count != model.store().len() {
        return Err(ckpt_err(i, format!("{count} parameters, model has {}", model.store().len())));
    }
    for _ in 0..count {
        let (i, h) = tagged(next()?, "param")?;
        let mut parts = h.split_whitespace();
        let name = parts.next().ok_or_else(|| ckpt_err(i, "missing name"))?.to_string();
        let trainable = match parts.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(ckpt_err(i, "trainable flag must be 0 or 1")),
        };
        let shape: Vec<usize> = parts.map(str::parse).collect::<Result<_, _>>().map_err(|e| ckpt_err(i, e))?;
        let id = model.store().id(&name).ok_or_else(|| ckpt_err(i, format!("unknown parameter `{name}`")))?;
        if model.store().get(id).shape() != shape.as_slice() {
            return Err(ckpt_err(i, format!("shape {shape:?} does not match `{name}`")));
        }
        let (j, vals) = next()?;
        let values: Vec<f64> = vals
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| ckpt_err(j, e))?;
        let t = model.store_mut().get_mut(id);
        if values.len() != t.len() {
            return Err(ckpt_err(j, format!("expected {} values, found {}", t.len(), values.len())));
        }
        t.data_mut().copy_from_slice(&values);
        t.set_trainable(trainable);
    }
    Ok(model)
}
