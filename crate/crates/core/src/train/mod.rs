//! Full fine-tuning and sparse fine-tuning (SFT) through per-language head masks.

mod adamw;
mod checkpoint;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamWHyper, OptimizerState};
pub use checkpoint::{CheckpointStore, Provenance, Snapshot};

use crate::data::{language_slice, Corpus, TaskKind};
use crate::error::{Error, Result};
use crate::model::{self, Example, LanguageId, Parameters, SubnetworkMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Full,
    Sft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Batching {
    /// Shuffled batches drawn from all languages at once.
    Mixed,
    /// Every batch holds one language; each language gets the same number of
    /// batches per epoch and batches are visited in random order.
    LanguageHomogeneous,
}

fn default_weight_decay() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    16
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Defaults to mixed batches for full training, homogeneous for SFT.
    #[serde(default)]
    pub batching: Option<Batching>,
    /// SFT only: one mask per training language, indexed by language id.
    #[serde(default)]
    pub masks: Vec<SubnetworkMask>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, learning_rate: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            epochs,
            seed,
            mode,
            batching: None,
            masks: Vec::new(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    /// Learning rates used when fine-tuning a large pretrained encoder on the
    /// inference, paraphrase and sentiment tasks. Far too small for training
    /// the micro model from scratch; kept as named presets.
    pub fn pretrained_learning_rate(task: TaskKind) -> f64 {
        match task {
            TaskKind::PairInferenceBinary => 2e-5,
            TaskKind::PairParaphrase => 9e-6,
            TaskKind::SingleSentimentBinary => 2e-5,
        }
    }

    pub fn hyper(&self) -> AdamWHyper {
        AdamWHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn effective_batching(&self) -> Batching {
        self.batching.unwrap_or(match self.mode {
            TrainMode::Full => Batching::Mixed,
            TrainMode::Sft => Batching::LanguageHomogeneous,
        })
    }

    /// Hash of everything that shapes the trajectory; the epoch count is
    /// excluded so a run can be extended.
    pub fn trajectory_hash(&self) -> String {
        crate::hashing::hash_json(&TrainConfig { epochs: 0, ..self.clone() })
    }

    pub fn validate(&self, num_languages: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be a finite non-negative number"));
        }
        if self.mode == TrainMode::Sft && self.masks.len() != num_languages {
            return Err(Error::config(format!(
                "sft needs one mask per training language: have {}, need {num_languages}",
                self.masks.len()
            )));
        }
        Ok(())
    }
}

/// A batch of train-corpus positions, tagged with its language when homogeneous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub language: Option<LanguageId>,
    pub indices: Vec<usize>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Batch schedule of one epoch; a pure function of (corpus, config, epoch).
pub fn epoch_batches(train: &Corpus, config: &TrainConfig, epoch: usize) -> Vec<Batch> {
    let mut rng = epoch_rng(config.seed, epoch);
    let b = config.batch_size;
    match config.effective_batching() {
        Batching::Mixed => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            order.chunks(b).map(|c| Batch { language: None, indices: c.to_vec() }).collect()
        }
        Batching::LanguageHomogeneous => {
            let largest = train.language_ids().map(|l| train.language_index(l).len()).max().unwrap_or(0);
            let per_language = largest.div_ceil(b);
            let mut batches = Vec::new();
            for lang in train.language_ids() {
                let mut idx = train.language_index(lang).to_vec();
                if idx.is_empty() {
                    continue;
                }
                idx.shuffle(&mut rng);
                // smaller languages wrap around so every language gets the same batch count
                let needed = if idx.len() == largest { largest } else { per_language * b };
                let stream: Vec<usize> = idx.iter().cycle().take(needed).copied().collect();
                batches.extend(stream.chunks(b).map(|c| Batch { language: Some(lang), indices: c.to_vec() }));
            }
            batches.shuffle(&mut rng);
            batches
        }
    }
}

fn batch_gradient(params: &Parameters, examples: &[&Example], mask: &SubnetworkMask) -> Result<(Vec<f64>, f64)> {
    let grads: Vec<model::GradVector> =
        examples.par_iter().map(|e| model::loss_and_grad(params, e, mask)).collect::<Result<_>>()?;
    let mut sum = vec![0.0; params.len()];
    let mut loss = 0.0;
    for g in &grads {
        loss += g.loss;
        for (s, v) in sum.iter_mut().zip(&g.values) {
            *s += v;
        }
    }
    let scale = 1.0 / examples.len() as f64;
    sum.iter_mut().for_each(|v| *v *= scale);
    Ok((sum, loss * scale))
}

/// Per-language dev accuracy with each language's evaluation mask.
pub fn dev_accuracies(params: &Parameters, dev: &Corpus, masks: &[SubnetworkMask]) -> Result<Vec<f64>> {
    dev.language_ids()
        .map(|l| {
            let slice = language_slice(dev, l)?;
            model::evaluate(params, slice.examples(), &masks[l.index()])
        })
        .collect()
}

/// Hooks for persisting progress after each epoch.
pub trait EpochSink {
    fn epoch_done(&mut self, store: &CheckpointStore, state: &OptimizerState) -> Result<()>;
}

struct NoSink;
impl EpochSink for NoSink {
    fn epoch_done(&mut self, _: &CheckpointStore, _: &OptimizerState) -> Result<()> {
        Ok(())
    }
}

/// Writes the store and optimizer state to a directory after every epoch.
pub struct DirSink<'a>(pub &'a Path);

impl EpochSink for DirSink<'_> {
    fn epoch_done(&mut self, store: &CheckpointStore, state: &OptimizerState) -> Result<()> {
        store.save(self.0)?;
        CheckpointStore::save_optimizer(self.0, state)
    }
}

/// Training run that can start from a partially completed store.
pub fn train_resume(
    init: &Parameters,
    train: &Corpus,
    dev: &Corpus,
    config: &TrainConfig,
    resume: Option<(CheckpointStore, OptimizerState)>,
    sink: &mut dyn EpochSink,
) -> Result<CheckpointStore> {
    let languages = train.languages().len();
    config.validate(languages)?;
    if train.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let cfg = init.config();
    for m in &config.masks {
        m.check_shape(cfg)?;
    }
    let eval_masks: Vec<SubnetworkMask> = match config.mode {
        TrainMode::Full => vec![SubnetworkMask::full_for(cfg); languages],
        TrainMode::Sft => config.masks.clone(),
    };
    let expansions: Vec<Vec<bool>> = match config.mode {
        TrainMode::Full => Vec::new(),
        TrainMode::Sft => config.masks.iter().map(|m| m.expand(init.layout())).collect(),
    };
    let full_mask = SubnetworkMask::full_for(cfg);
    let provenance =
        Provenance { config_hash: config.trajectory_hash(), corpus_hash: train.content_hash() };

    let (mut store, mut state, mut params) = match resume {
        Some((store, state)) => {
            if store.provenance != provenance {
                return Err(Error::StaleCache {
                    dir: std::path::PathBuf::new(),
                    expected: provenance.config_hash,
                    found: store.provenance.config_hash.clone(),
                });
            }
            let params = store.last().map(|s| s.params.clone()).unwrap_or_else(|| init.clone());
            (store, state, params)
        }
        None => (
            CheckpointStore::new(train.languages().to_vec(), eval_masks.clone(), provenance),
            OptimizerState::new(init.len(), config.hyper()),
            init.clone(),
        ),
    };

    let first_epoch = store.len() + 1;
    for epoch in first_epoch..=config.epochs {
        for (step, batch) in epoch_batches(train, config, epoch).into_iter().enumerate() {
            let examples: Vec<&Example> = batch.indices.iter().map(|&i| &train.examples()[i]).collect();
            let (mask, update) = match config.mode {
                TrainMode::Full => (&full_mask, None),
                TrainMode::Sft => {
                    let lang = batch.language.ok_or_else(|| Error::config("sft requires language-homogeneous batches"))?;
                    let mask = config
                        .masks
                        .get(lang.index())
                        .ok_or_else(|| Error::config(format!("no sft mask for language {lang}")))?;
                    (mask, Some(expansions[lang.index()].as_slice()))
                }
            };
            let (mut grad, loss) = batch_gradient(&params, &examples, mask).map_err(|e| match e {
                Error::Numerical { message, .. } => Error::Training { epoch, step, message },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, step, message: format!("non-finite loss {loss}") });
            }
            if let Some(keep) = update {
                for (g, &k) in grad.iter_mut().zip(keep) {
                    if !k {
                        *g = 0.0;
                    }
                }
            }
            adamw_step(&mut state, params.values_mut(), &grad, update)
                .map_err(|e| Error::Training { epoch, step, message: e.to_string() })?;
        }
        let dev_accuracy = dev_accuracies(&params, dev, &eval_masks)?;
        log::info!("epoch {epoch}: dev accuracy {dev_accuracy:?}");
        store.push(Snapshot { epoch, params: params.clone(), dev_accuracy })?;
        sink.epoch_done(&store, &state)?;
    }
    Ok(store)
}

/// Fine-tunes every parameter on the concatenated multilingual corpus.
pub fn train_full(init: &Parameters, train: &Corpus, dev: &Corpus, config: &TrainConfig) -> Result<CheckpointStore> {
    if config.mode != TrainMode::Full {
        return Err(Error::contract("train_full needs mode = full"));
    }
    train_resume(init, train, dev, config, None, &mut NoSink)
}

/// Sparse fine-tuning: each language's batches run through and update only
/// its own subnetwork; shared (non-head) parameters always update.
pub fn train_sft(init: &Parameters, train: &Corpus, dev: &Corpus, config: &TrainConfig) -> Result<CheckpointStore> {
    if config.mode != TrainMode::Sft {
        return Err(Error::contract("train_sft needs mode = sft"));
    }
    train_resume(init, train, dev, config, None, &mut NoSink)
}
