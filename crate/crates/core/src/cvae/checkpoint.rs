use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cvae, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::preprocess::EncodingSpec;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epoch whose parameters are stored (1-based).
    pub epoch: usize,
    pub seed: u64,
    pub best_val_loss: Option<f64>,
    /// Hash of the experiment configuration that produced the model.
    pub config_hash: Option<String>,
}

/// Everything needed to rebuild a model and interpret its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub encoding: EncodingSpec,
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: &Cvae, encoding: &EncodingSpec, meta: CheckpointMeta) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model_config: model.config.clone(),
            encoding: encoding.clone(),
            meta,
            params: model.params.clone(),
        }
    }

    pub fn model(&self) -> Result<Cvae> {
        self.model_config.check_encoding(&self.encoding)?;
        Cvae::from_params(self.model_config.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
