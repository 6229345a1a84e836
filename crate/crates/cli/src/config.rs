use std::path::{Path, PathBuf};

use egean::estimators::{EstimatorKind, Lambda};
use egean::lab::{ProblemSpec, WorldSpec};
use egean::model::{Ablation, ModelConfig};
use egean::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::Failure;

pub const OUT_ROOT_ENV: &str = "EGEAN_OUT_ROOT";

/// Everything a command needs; sections a command does not use may be
/// absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_pairs: usize,
    pub feature_dim: usize,
    pub shift_strength: f64,
    pub seed: u64,
    /// Defaults to one user (item) per pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_users: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_items: Option<usize>,
    #[serde(default = "default_min_propensity")]
    pub min_propensity: f64,
    /// Seed for the click and conversion draw; defaults to `seed + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_seed: Option<u64>,
}

fn default_min_propensity() -> f64 {
    0.01
}

impl WorldConfig {
    pub fn spec(&self) -> WorldSpec {
        let mut spec = WorldSpec::random(self.n_pairs, self.feature_dim, self.shift_strength, self.seed);
        spec.n_users = self.n_users.unwrap_or(self.n_pairs);
        spec.n_items = self.n_items.unwrap_or(self.n_pairs);
        spec.min_propensity = self.min_propensity;
        spec
    }

    pub fn observation_seed(&self) -> u64 {
        self.observation_seed.unwrap_or(self.seed.wrapping_add(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Ground-truth sidecar written by `simulate`; enables oracle CVR AUC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Exact,
    MonteCarlo,
    #[default]
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub estimators: Vec<EstimatorKind>,
    pub lambdas: Vec<Lambda>,
    pub mode: BenchMode,
    pub replicates: usize,
    pub seed: u64,
    pub problem: ProblemSpec,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            estimators: vec![EstimatorKind::Naive, EstimatorKind::Dr, EstimatorKind::Pvdr],
            lambdas: [0.0, 0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|&l| Lambda::new(l).expect("grid in range"))
                .collect(),
            mode: BenchMode::Both,
            replicates: 1000,
            seed: 0,
            problem: ProblemSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub root: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("runs") }
    }
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` onto `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Failure::config(format!("override key `{key}` is malformed")));
    }
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(Failure::config(format!("override `{key}`: `{p}` is not a section"))),
        };
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Loads the config file (if any), applies overrides in order, and
/// resolves the output root from the environment.
pub fn resolve(path: Option<&Path>, overrides: &[String], ablate: Option<&str>) -> Result<RunConfig, Failure> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io(format!("reading {}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::config(e.to_string()))?;
    if let Some(name) = ablate {
        cfg.model.ablation = Ablation::without(name).ok_or_else(|| {
            Failure::config(format!(
                "unknown ablation `{name}` (expected without-EN, without-TPN, without-ML or full)"
            ))
        })?;
    }
    if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
        if !root.is_empty() {
            cfg.output.root = PathBuf::from(root);
        }
    }
    cfg.model.validate().map_err(|e| Failure::config(e.to_string()))?;
    cfg.train.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Hash of everything except the output location.
    pub fn content_hash(&self, command: &str) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        egean::train::content_hash(format!("{command}\n{}", c.to_toml()).as_bytes())
    }

    pub fn world(&self) -> Result<&WorldConfig, Failure> {
        self.world.as_ref().ok_or_else(|| Failure::config("missing required section `world`"))
    }

    pub fn data(&self) -> Result<&DataConfig, Failure> {
        self.data.as_ref().ok_or_else(|| Failure::config("missing required section `data`"))
    }
}
