use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::ComposeOp;
use crate::data::CorpusConfig;
use crate::error::{Error, Result};
use crate::influence::InfluenceConfig;
use crate::model::ModelConfig;
use crate::prune::PruneConfig;
use crate::train::{TrainConfig, TrainMode};

/// Which model subnetworks are identified in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IdentificationSource {
    /// The multilingually fine-tuned model (masks then apply to that model).
    #[default]
    Multilingual,
    /// A separate model fine-tuned on language ℓ only.
    Monolingual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSection {
    #[serde(flatten)]
    pub config: PruneConfig,
    #[serde(default)]
    pub source: IdentificationSource,
}

/// Starting point of sparse fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SftInit {
    /// The same initialisation full fine-tuning starts from.
    #[default]
    Pretrained,
    /// The final fully fine-tuned parameters.
    FineTuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub full: TrainConfig,
    /// Masks are filled in by the pipeline.
    pub sft: TrainConfig,
    #[serde(default)]
    pub sft_init: SftInit,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComposedPair {
    pub a: String,
    pub b: String,
    pub op: ComposeOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSection {
    /// Seeds for shuffled-mask baselines, both at test time and for SFT.
    pub random_seeds: Vec<u64>,
    /// Languages whose mask is applied to every test language.
    #[serde(default)]
    pub suboptimal: Vec<String>,
    #[serde(default)]
    pub composed: Vec<ComposedPair>,
    #[serde(default = "yes")]
    pub sft: bool,
    #[serde(default = "yes")]
    pub sft_random: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: TrainSection,
    pub prune: PruneSection,
    pub influence: InfluenceConfig,
    pub variants: VariantSection,
    /// Artifact directory; relative paths resolve against the working directory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("ci-scale", include_str!("../../configs/ci-scale.toml")),
    ("ci-scale-graded", include_str!("../../configs/ci-scale-graded.toml")),
    ("paper-scale", include_str!("../../configs/paper-scale.toml")),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED.iter().map(|(n, _)| *n).collect()
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Lookup(format!("no bundled config named {name}")))?;
        Self::from_toml(text)
    }

    /// A file path, or the name of a bundled config.
    pub fn load(path_or_name: &str) -> Result<Self> {
        let path = Path::new(path_or_name);
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_toml(&text)
        } else {
            Self::bundled(path_or_name)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        if self.model.vocab_size != self.corpus.vocab_size {
            return Err(Error::config("model and corpus vocab sizes differ"));
        }
        if self.train.full.mode != TrainMode::Full || self.train.sft.mode != TrainMode::Sft {
            return Err(Error::config("train.full must use mode full and train.sft mode sft"));
        }
        if !self.train.sft.masks.is_empty() {
            return Err(Error::config("train.sft.masks are derived from pruning and must be left empty"));
        }
        if self.model.max_seq_len < crate::data::MAX_RENDERED_LEN {
            return Err(Error::config(format!(
                "model.max_seq_len must be at least {} to fit rendered examples",
                crate::data::MAX_RENDERED_LEN
            )));
        }
        let names = self.corpus.language_names();
        for l in &self.variants.suboptimal {
            self.corpus.language_id(l)?;
        }
        for c in &self.variants.composed {
            self.corpus.language_id(&c.a)?;
            self.corpus.language_id(&c.b)?;
        }
        if self.influence.top_m > self.corpus.train_per_language * names.len() {
            return Err(Error::config("influence.top_m exceeds the training set size"));
        }
        if !(self.prune.config.rate > 0.0 && self.prune.config.rate < 1.0) {
            return Err(Error::config("prune.rate must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.prune.config.threshold) {
            return Err(Error::config("prune.threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Content hash; the output location is not part of it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        crate::hashing::hash_json(&c)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    /// Same experiment on another corpus/model seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.corpus.seed = seed;
        c.model_seed = seed;
        c.train.full.seed = seed;
        c.train.sft.seed = seed;
        c.name = format!("{}-seed{seed}", self.name);
        c.out_dir = self.out_dir.as_ref().map(|d| d.join(format!("seed{seed}")));
        c
    }
}
