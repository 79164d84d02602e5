//! Experiment driver behind the `condgen` binary: prepare → train →
//! generate → evaluate → report. The filesystem is the only contract
//! between stages.

pub mod artifacts;
pub mod config;
mod evaluate;
mod generate;
pub mod plot;
mod prepare;
mod report;
pub mod tables;
mod train;

use std::path::Path;

use anyhow::{Context, Result};

use condgen::eventlog::{parse_log, EventLog, LogFormat, ParseOptions};

pub use artifacts::{Layout, Manifest, HASH_META};
pub use config::{ConfigError, ExperimentConfig, CONFIG_SCHEMA_VERSION};
pub use evaluate::{evaluate, EvaluateArgs, EvaluationResults, ModelResults};
pub use generate::{generate, GenerateArgs};
pub use prepare::{prepare, PrepareOutcome};
pub use report::report;
pub use train::{train, TrainArgs};

/// A loaded configuration bound to an output directory.
pub struct Run {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    pub hash: String,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, out: Option<&Path>) -> Self {
        let layout = Layout::new(cfg.output_root(out));
        let hash = cfg.hash();
        Run { cfg, layout, hash }
    }
}

pub(crate) fn read_xes(path: &Path) -> Result<EventLog> {
    parse_log(path, LogFormat::Xes, &ParseOptions::default())
        .with_context(|| format!("reading {}", path.display()))
}
