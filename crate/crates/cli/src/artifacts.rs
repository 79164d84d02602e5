//! On-disk layout of an experiment run and the per-stage manifests that
//! tie artifacts to the configuration that produced them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::sha256_file;

/// Log-metadata key carrying the config hash.
pub const HASH_META: &str = "condgen:config_hash";

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn prepared(&self) -> PathBuf {
        self.root.join("prepared")
    }
    pub fn train_log(&self) -> PathBuf {
        self.prepared().join("train.xes")
    }
    pub fn val_log(&self) -> PathBuf {
        self.prepared().join("val.xes")
    }
    pub fn test_log(&self) -> PathBuf {
        self.prepared().join("test.xes")
    }
    pub fn encoding(&self) -> PathBuf {
        self.prepared().join("encoding.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.model().join("checkpoint.json")
    }
    pub fn last_checkpoint(&self) -> PathBuf {
        self.model().join("last.json")
    }
    pub fn history(&self) -> PathBuf {
        self.model().join("history.csv")
    }

    pub fn generated(&self) -> PathBuf {
        self.root.join("generated")
    }
    pub fn gen_log(&self, i: usize, ext: &str) -> PathBuf {
        self.generated().join(format!("gen_{i:02}.{ext}"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub tool_version: String,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    /// Hashes every regular file in `dir` except the manifest itself.
    pub fn write(dir: &Path, stage: &str, config_hash: &str) -> Result<Manifest> {
        let mut files = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            if name == Self::FILE || !e.file_type()?.is_file() {
                continue;
            }
            files.insert(name, sha256_file(&e.path())?);
        }
        let m = Manifest {
            stage: stage.into(),
            config_hash: config_hash.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            files,
        };
        std::fs::write(dir.join(Self::FILE), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let p = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&p)
            .with_context(|| format!("missing {}; run the earlier stage first", p.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fails on a hash other than `expected` unless `allow_mixed`.
    pub fn check(&self, expected: &str, allow_mixed: bool) -> Result<()> {
        if self.config_hash != expected {
            if allow_mixed {
                log::warn!(
                    "{} artifacts come from config {} (current {expected})",
                    self.stage,
                    self.config_hash
                );
            } else {
                bail!(
                    "{} artifacts were produced by config {} but the current config hashes to \
                     {expected}; rerun that stage or pass --allow-mixed",
                    self.stage,
                    self.config_hash
                );
            }
        }
        Ok(())
    }
}

/// Creates `dir`, refusing to touch an existing non-empty one unless
/// `force`, in which case it is cleared first.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() {
        if !force {
            bail!("{} already exists; pass --force to overwrite", dir.display());
        }
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}
