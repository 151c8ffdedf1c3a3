use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adamw::OptimizerState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters, SubnetworkMask};

const MANIFEST: &str = "manifest.json";
const OPTIMIZER: &str = "optimizer.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub corpus_hash: String,
}

/// Parameters after a completed epoch (θₑ) with per-language dev accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// 1-based epoch index.
    pub epoch: usize,
    pub params: Parameters,
    pub dev_accuracy: Vec<f64>,
}

/// Ordered per-epoch snapshots of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStore {
    pub languages: Vec<String>,
    /// Mask each language is evaluated (and, for SFT, trained) with.
    pub eval_masks: Vec<SubnetworkMask>,
    pub provenance: Provenance,
    snapshots: Vec<Snapshot>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEpoch {
    epoch: usize,
    file: String,
    params_hash: String,
    dev_accuracy: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    languages: Vec<String>,
    eval_masks: Vec<SubnetworkMask>,
    provenance: Provenance,
    epochs: Vec<ManifestEpoch>,
}

impl CheckpointStore {
    pub fn new(languages: Vec<String>, eval_masks: Vec<SubnetworkMask>, provenance: Provenance) -> Self {
        CheckpointStore { languages, eval_masks, provenance, snapshots: Vec::new() }
    }

    /// Appends the next epoch; indices must strictly increase.
    pub fn push(&mut self, snapshot: Snapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.epoch <= last.epoch {
                return Err(Error::contract(format!(
                    "checkpoint epoch {} does not follow {}",
                    snapshot.epoch, last.epoch
                )));
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn params(&self) -> Vec<&Parameters> {
        self.snapshots.iter().map(|s| &s.params).collect()
    }

    fn manifest(&self) -> Result<Manifest> {
        let model = self
            .snapshots
            .first()
            .map(|s| s.params.config().clone())
            .ok_or_else(|| Error::contract("cannot persist an empty checkpoint store"))?;
        Ok(Manifest {
            model,
            languages: self.languages.clone(),
            eval_masks: self.eval_masks.clone(),
            provenance: self.provenance.clone(),
            epochs: self
                .snapshots
                .iter()
                .map(|s| ManifestEpoch {
                    epoch: s.epoch,
                    file: format!("epoch_{}.bin", s.epoch),
                    params_hash: crate::hashing::sha256_hex(&s.params.to_bytes()),
                    dev_accuracy: s.dev_accuracy.clone(),
                })
                .collect(),
        })
    }

    /// Writes `manifest.json` and one parameter binary per epoch into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest()?;
        for (s, entry) in self.snapshots.iter().zip(&manifest.epochs) {
            s.params.save(&dir.join(&entry.file))?;
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn save_optimizer(dir: &Path, state: &OptimizerState) -> Result<()> {
        let path = dir.join(OPTIMIZER);
        std::fs::write(&path, serde_json::to_vec(state)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_optimizer(dir: &Path) -> Result<Option<OptimizerState>> {
        let path = dir.join(OPTIMIZER);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_slice(&bytes)?))
    }

    /// Loads a store and verifies every snapshot against its recorded hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        let mut store = CheckpointStore::new(manifest.languages, manifest.eval_masks, manifest.provenance);
        for entry in manifest.epochs {
            let params = Parameters::load(&dir.join(&entry.file))?;
            if params.config() != &manifest.model {
                return Err(Error::format(None, format!("{} has a different model config", entry.file)));
            }
            let hash = crate::hashing::sha256_hex(&params.to_bytes());
            if hash != entry.params_hash {
                return Err(Error::format(None, format!("{} does not match its recorded hash", entry.file)));
            }
            store.push(Snapshot { epoch: entry.epoch, params, dev_accuracy: entry.dev_accuracy })?;
        }
        Ok(store)
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(MANIFEST).exists()
    }
}
