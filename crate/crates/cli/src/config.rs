//! Experiment configuration: one JSON document per experiment.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use condgen::cvae::ModelConfig;
use condgen::eventlog::{LabelerSpec, LogFormat, ParseOptions, Timestamp, TraceFilter};
use condgen::metrics::{MetricOptions, DEFAULT_MIN_SUPPORT};
use condgen::preprocess::EncodingSpec;
use condgen::train::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "CONDGEN_OUT";

/// Invalid or unreadable configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config:\n{0}")]
    Invalid(FieldErrors),
}

#[derive(Debug, Default)]
pub struct FieldErrors(pub Vec<(String, String)>);

impl fmt::Display for FieldErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (path, msg)) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {path}: {msg}")?;
        }
        Ok(())
    }
}

impl FieldErrors {
    fn push(&mut self, path: &str, msg: impl fmt::Display) {
        self.0.push((path.to_string(), msg.to_string()));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Relative paths resolve against the directory of the config file.
    pub path: PathBuf,
    /// Inferred from the file extension when absent.
    #[serde(default)]
    pub format: Option<LogFormat>,
    #[serde(default)]
    pub parse: ParseOptions,
    #[serde(default)]
    pub filters: Vec<TraceFilter>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSizes {
    pub embedding_size: usize,
    pub lstm_hidden: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub attr_hidden: usize,
    /// Defaults to `lstm_hidden`.
    pub upsample_dim: Option<usize>,
}

impl Default for ModelSizes {
    fn default() -> Self {
        ModelSizes {
            embedding_size: 5,
            lstm_hidden: 200,
            latent_dim: 10,
            dropout: 0.05,
            attr_hidden: 32,
            upsample_dim: None,
        }
    }
}

impl ModelSizes {
    pub fn model_config(&self, spec: &EncodingSpec) -> ModelConfig {
        ModelConfig {
            embedding_size: self.embedding_size,
            lstm_hidden: self.lstm_hidden,
            latent_dim: self.latent_dim,
            dropout: self.dropout,
            attr_hidden: self.attr_hidden,
            upsample_dim: self.upsample_dim.unwrap_or(self.lstm_hidden),
            ..ModelConfig::for_encoding(spec)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub n_logs: usize,
    /// Start time of generated logs; defaults to the first test timestamp.
    pub tau: Option<Timestamp>,
    /// Defaults to the conditional ratio of the training split.
    pub target_ratio: Option<f64>,
    pub max_len: Option<usize>,
    pub resample_limit: usize,
    /// Latent draws decoded under both conditions for the what-if table.
    pub what_if_pairs: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            n_logs: 10,
            tau: None,
            target_ratio: None,
            max_len: None,
            resample_limit: 10,
            what_if_pairs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub bin_hours: bool,
    pub min_support: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            bin_hours: false,
            min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

impl MetricSettings {
    pub fn options(&self) -> MetricOptions {
        MetricOptions {
            bin_hours: self.bin_hours,
        }
    }
}

fn default_label_attr() -> String {
    "label".into()
}

fn default_split() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub dataset: DatasetConfig,
    pub labeler: LabelerSpec,
    #[serde(default = "default_label_attr")]
    pub label_attr: String,
    /// Train, validation and test fractions, in chronological order.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub model: ModelSizes,
    /// `train.seed` is ignored; the global `seed` drives training.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub generation: GenerationSettings,
    #[serde(default)]
    pub metrics: MetricSettings,
    /// Relative to the config file. Excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads and validates `path`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.base_dir.join(&self.dataset.path)
    }

    pub fn dataset_format(&self) -> Option<LogFormat> {
        self.dataset
            .format
            .or_else(|| LogFormat::from_path(&self.dataset.path))
    }

    /// `--out`, then the environment override, then `output_dir`, then
    /// `runs/<name>` next to the config file.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_ENV) {
            return PathBuf::from(p);
        }
        match &self.output_dir {
            Some(p) => self.base_dir.join(p),
            None => self.base_dir.join("runs").join(&self.name),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = FieldErrors::default();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            errs.push(
                "schema_version",
                format!("expected {CONFIG_SCHEMA_VERSION}, got {}", self.schema_version),
            );
        }
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            errs.push("name", "must be a non-empty file-name-safe string");
        }
        let data = self.dataset_path();
        if !data.is_file() {
            errs.push("dataset.path", format!("file not found: {}", data.display()));
        }
        match self.dataset_format() {
            None => errs.push("dataset.format", "cannot infer format; set \"xes\" or \"csv\""),
            Some(LogFormat::Csv) if self.dataset.parse.column_map.is_none() => {
                errs.push("dataset.parse.column_map", "required for CSV input")
            }
            _ => {}
        }
        if let Err(e) = self.labeler.validate() {
            errs.push("labeler", e);
        }
        if self.label_attr.is_empty() {
            errs.push("label_attr", "must not be empty");
        }
        let s = self.split;
        if s.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errs.push("split", "fractions must be positive and sum to 1");
        }
        let m = &self.model;
        for (field, v) in [
            ("model.embedding_size", m.embedding_size),
            ("model.lstm_hidden", m.lstm_hidden),
            ("model.latent_dim", m.latent_dim),
            ("model.attr_hidden", m.attr_hidden),
            ("model.upsample_dim", m.upsample_dim.unwrap_or(1)),
        ] {
            if v == 0 {
                errs.push(field, "must be positive");
            }
        }
        if !(0.0..1.0).contains(&m.dropout) {
            errs.push("model.dropout", "must be in [0, 1)");
        }
        if let Err(e) = self.train.validate() {
            errs.push("train", e);
        }
        if let Err(e) = condgen::train::AnnealingSchedule::new(self.train.n_cycles, self.train.ramp_ratio, 1) {
            errs.push("train.n_cycles/ramp_ratio", e);
        }
        let g = &self.generation;
        if g.n_logs == 0 {
            errs.push("generation.n_logs", "must be positive");
        }
        if g.resample_limit == 0 {
            errs.push("generation.resample_limit", "must be positive");
        }
        if g.max_len == Some(0) {
            errs.push("generation.max_len", "must be positive");
        }
        if let Some(r) = g.target_ratio {
            if !(0.0..=1.0).contains(&r) {
                errs.push("generation.target_ratio", "must be in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.metrics.min_support) {
            errs.push("metrics.min_support", "must be in [0, 1]");
        }
        if errs.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Hex SHA-256 prefix of the canonical JSON form, output directory
    /// excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
