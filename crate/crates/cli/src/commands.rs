use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use egean::data::{load_dataset, write_dataset, DatasetManifest, Schema};
use egean::estimators::{EstimatorKind, Lambda};
use egean::lab::{
    exact_expected_loss, generate_world, monte_carlo_stats, sample_observations, write_study_csv, EstimatorProblem,
    StudyRow, MAX_ENUMERATION_PAIRS,
};
use egean::model::{read_checkpoint, write_checkpoint, EgeanModel};
use egean::train::{
    content_hash, evaluate, export_embeddings, finetune_and_evaluate, fit, pretrain_exposure, write_trace_csv, TrainData,
    TrainError,
};
use serde::{Deserialize, Serialize};

use crate::config::{BenchMode, DataConfig, RunConfig};
use crate::Failure;

/// A run directory under the output root, named by command and config hash.
pub struct RunDir {
    path: PathBuf,
    command: String,
    hash: String,
    seed: u64,
    artifacts: Vec<String>,
    inputs: Vec<(String, String)>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    /// SHA-256 of each input file, keyed by role.
    inputs: std::collections::BTreeMap<&'a str, &'a str>,
    artifacts: &'a [String],
}

impl RunDir {
    pub fn create(cfg: &RunConfig, command: &str, seed: u64) -> Result<Self, Failure> {
        let hash = cfg.content_hash(command);
        let path = cfg.output.root.join(format!("{command}-{}", &hash[..16]));
        fs::create_dir_all(&path).map_err(|e| Failure::io(format!("creating {}: {e}", path.display())))?;
        let dir = Self {
            path,
            command: command.to_string(),
            hash,
            seed,
            artifacts: Vec::new(),
            inputs: Vec::new(),
        };
        dir.write_bytes("config.toml", cfg.to_toml().as_bytes())?;
        Ok(dir)
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let p = self.path.join(name);
        self.artifacts.push(name.to_string());
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Failure::io(format!("creating {}: {e}", p.display())))
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let p = self.path.join(name);
        fs::write(&p, bytes).map_err(|e| Failure::io(format!("writing {}: {e}", p.display())))
    }

    fn artifact_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("report serialises");
        text.push('\n');
        self.artifacts.push(name.to_string());
        self.write_bytes(name, text.as_bytes())
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<(), Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))?;
        self.inputs.push((role.to_string(), content_hash(&bytes)));
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf, Failure> {
        let record = RunRecord {
            command: &self.command,
            config_hash: &self.hash,
            seed: self.seed,
            inputs: self.inputs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
            artifacts: &self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&record).expect("record serialises");
        text.push('\n');
        self.write_bytes("run.json", text.as_bytes())?;
        Ok(self.path)
    }
}

fn flush(mut w: BufWriter<File>) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::io(e.to_string()))
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFinite { .. } => Failure::numeric(e.to_string()),
        TrainError::Io(_) => Failure::io(e.to_string()),
        TrainError::InvalidConfig(_) => Failure::config(e.to_string()),
        other => Failure::config(other.to_string()),
    }
}

/// One line of the ground-truth sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthRow {
    pub row: usize,
    pub propensity: f64,
    pub conversion_prob: f64,
    pub conversion: u8,
}

pub fn simulate(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let wc = cfg.world()?;
    let spec = wc.spec();
    let world = generate_world(&spec).map_err(|e| Failure::config(e.to_string()))?;
    let obs = sample_observations(&world, wc.observation_seed());
    let data = TrainData::from_world(&world, &obs);
    let mut dir = RunDir::create(cfg, "simulate", wc.seed)?;

    let out = dir.file("dataset.csv")?;
    write_dataset(out, &data.schema, &data.records).map_err(|e| Failure::io(e.to_string()))?;
    dir.artifact_json("schema.json", &data.schema)?;
    dir.artifact_json("manifest.json", &DatasetManifest::compute(&data.schema, &data.records))?;
    dir.artifact_json("world.json", &spec)?;
    let mut w = csv::Writer::from_writer(dir.file("truth.csv")?);
    for i in 0..world.len() {
        w.serialize(TruthRow {
            row: i,
            propensity: world.propensity()[i],
            conversion_prob: world.conversion_prob()[i],
            conversion: u8::from(obs.conversions[i]),
        })
        .map_err(|e| Failure::io(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::io(e.to_string()))?;
    dir.finish()
}

fn load_data(dc: &DataConfig, dir: &mut RunDir) -> Result<TrainData, Failure> {
    let schema_text =
        fs::read_to_string(&dc.schema).map_err(|e| Failure::io(format!("reading {}: {e}", dc.schema.display())))?;
    let schema: Schema =
        serde_json::from_str(&schema_text).map_err(|e| Failure::config(format!("{}: {e}", dc.schema.display())))?;
    dir.input("schema", &dc.schema)?;
    let (records, _) = load_dataset(&dc.dataset, &schema).map_err(|e| match e {
        egean::data::DataError::Io(_) => Failure::io(format!("{}: {e}", dc.dataset.display())),
        other => Failure::config(format!("{}: {other}", dc.dataset.display())),
    })?;
    dir.input("dataset", &dc.dataset)?;
    let oracle = match &dc.truth {
        Some(path) => {
            let file = File::open(path).map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))?;
            let mut labels = Vec::with_capacity(records.len());
            for (i, row) in csv::Reader::from_reader(file).deserialize::<TruthRow>().enumerate() {
                let row = row.map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
                if row.row != i {
                    return Err(Failure::config(format!("{}: rows out of order at {i}", path.display())));
                }
                labels.push(row.conversion == 1);
            }
            dir.input("truth", path)?;
            Some(labels)
        }
        None => None,
    };
    TrainData::new(schema, records, oracle).map_err(train_failure)
}

fn load_checkpoint(path: &Path) -> Result<EgeanModel, Failure> {
    let file = File::open(path).map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(file)).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn require_checkpoint(dc: &DataConfig) -> Result<&Path, Failure> {
    dc.checkpoint
        .as_deref()
        .ok_or_else(|| Failure::config("missing required key `data.checkpoint`"))
}

fn save_model(dir: &mut RunDir, model: &EgeanModel) -> Result<(), Failure> {
    let mut out = dir.file("model.ckpt")?;
    write_checkpoint(model, &mut out).map_err(|e| Failure::io(e.to_string()))?;
    flush(out)
}

pub fn pretrain(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dc = cfg.data()?;
    let mut dir = RunDir::create(cfg, "pretrain", cfg.train.seed)?;
    let data = load_data(dc, &mut dir)?;
    let mut model =
        EgeanModel::new(cfg.model.clone(), data.schema.clone(), cfg.train.seed).map_err(|e| Failure::config(e.to_string()))?;
    let report = pretrain_exposure(&mut model, &data, &cfg.train).map_err(train_failure)?;
    save_model(&mut dir, &model)?;
    dir.artifact_json("pretrain.json", &report)?;
    dir.finish()
}

/// Full two-stage training, or stage 2 only when `data.checkpoint` names a
/// pretrained model.
pub fn train(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dc = cfg.data()?;
    let mut dir = RunDir::create(cfg, "train", cfg.train.seed)?;
    let data = load_data(dc, &mut dir)?;
    let report = match &dc.checkpoint {
        Some(path) => {
            let mut model = load_checkpoint(path)?;
            if model.config() != &cfg.model {
                return Err(Failure::config(format!(
                    "model section differs from the config stored in {}",
                    path.display()
                )));
            }
            dir.input("checkpoint", path)?;
            let report = finetune_and_evaluate(&mut model, &data, &cfg.train, None).map_err(train_failure)?;
            save_model(&mut dir, &model)?;
            report
        }
        None => {
            let mut model = EgeanModel::new(cfg.model.clone(), data.schema.clone(), cfg.train.seed)
                .map_err(|e| Failure::config(e.to_string()))?;
            let report = fit(&mut model, &data, &cfg.train).map_err(train_failure)?;
            save_model(&mut dir, &model)?;
            report
        }
    };
    dir.artifact_json("metrics.json", &report)?;
    let out = dir.file("trace.csv")?;
    write_trace_csv(out, &report.epochs).map_err(train_failure)?;
    dir.finish()
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dc = cfg.data()?;
    let ckpt = require_checkpoint(dc)?;
    let mut dir = RunDir::create(cfg, "evaluate", cfg.train.seed)?;
    let data = load_data(dc, &mut dir)?;
    let model = load_checkpoint(ckpt)?;
    dir.input("checkpoint", ckpt)?;
    let eval = evaluate(&model, &data).map_err(train_failure)?;
    dir.artifact_json("evaluation.json", &eval)?;
    dir.finish()
}

pub fn export(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dc = cfg.data()?;
    let ckpt = require_checkpoint(dc)?;
    let mut dir = RunDir::create(cfg, "export-embeddings", cfg.train.seed)?;
    let data = load_data(dc, &mut dir)?;
    let model = load_checkpoint(ckpt)?;
    dir.input("checkpoint", ckpt)?;
    let out = dir.file("embeddings.csv")?;
    export_embeddings(&model, &data, out).map_err(train_failure)?;
    dir.finish()
}

pub fn bench(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let wc = cfg.world()?;
    let bc = cfg.bench.clone().unwrap_or_default();
    if bc.estimators.is_empty() || bc.lambdas.is_empty() {
        return Err(Failure::config("bench.estimators and bench.lambdas must be non-empty"));
    }
    let exact = matches!(bc.mode, BenchMode::Exact | BenchMode::Both);
    let mc = matches!(bc.mode, BenchMode::MonteCarlo | BenchMode::Both);
    if exact && wc.n_pairs > MAX_ENUMERATION_PAIRS {
        return Err(Failure::too_large(format!(
            "world has {} pairs but exact enumeration is limited to {MAX_ENUMERATION_PAIRS}; \
             set bench.mode = \"monte_carlo\" or shrink world.n_pairs",
            wc.n_pairs
        )));
    }
    let world = generate_world(&wc.spec()).map_err(|e| Failure::config(e.to_string()))?;
    let problem = EstimatorProblem::from_world(&world, &bc.problem).map_err(|e| Failure::config(e.to_string()))?;
    let mut rows = Vec::new();
    for &kind in &bc.estimators {
        let stats = if mc {
            Some(monte_carlo_stats(&problem, kind, &bc.lambdas, bc.replicates, bc.seed).map_err(|e| Failure::config(e.to_string()))?)
        } else {
            None
        };
        for (j, &lambda) in bc.lambdas.iter().enumerate() {
            let row = match &stats {
                Some(s) => StudyRow::from_stats(&s[j]),
                None => exact_only_row(kind, lambda, problem.oracle_batch().clamp_events()),
            };
            let row = if exact {
                let e = exact_expected_loss(&problem.oracle_batch(), &problem.true_propensity, kind, lambda)
                    .map_err(|e| Failure::config(e.to_string()))?;
                row.with_exact(&e)
            } else {
                row
            };
            rows.push(row);
        }
    }
    let mut dir = RunDir::create(cfg, "bench-estimators", wc.seed)?;
    let mut out = dir.file("bench.csv")?;
    write_study_csv(&mut out, &rows).map_err(|e| Failure::io(e.to_string()))?;
    flush(out)?;
    dir.finish()
}

fn exact_only_row(kind: EstimatorKind, lambda: Lambda, clamp_events: usize) -> StudyRow {
    StudyRow {
        estimator: kind.name().to_string(),
        lambda: lambda.get(),
        bias: None,
        variance: None,
        ci_halfwidth: None,
        replicates: None,
        clamp_events,
        exact_expected: None,
        exact_bias: None,
        excluded_mass: None,
    }
}
