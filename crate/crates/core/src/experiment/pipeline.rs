//! Stage graph: data, full fine-tuning, pruning, sparse fine-tuning,
//! influence per variant. Every stage is cached under the workspace keyed by
//! a hash of its inputs.

use std::cell::{OnceCell, RefCell};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::compose;
use crate::data::{generate, language_slice, Corpus, GeneratedCorpus, Split};
use crate::error::{Error, Result};
use crate::hashing::hash_json;
use crate::influence::{
    compute_ranking_set, eligible_tests, read_rankings_csv, write_rankings_csv, InfluenceRanking, MaskAssignment,
    SketchCache, SketchSource,
};
use crate::model::{init_model, LanguageId, Parameters, SubnetworkMask};
use crate::prune::{find_subnetwork, shuffle_mask, PruneTrace};
use crate::train::{train_resume, CheckpointStore, DirSink, EpochSink, TrainConfig};

use super::artifacts::{StageState, Workspace};
use super::config::{ExperimentConfig, IdentificationSource, SftInit};
use super::variant::Variant;

/// Which stages a pipeline may compute when their artifacts are absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    /// Compute anything missing.
    Auto,
    /// Compute only stages whose name starts with the prefix; anything else
    /// missing is a dependency error.
    Only(String),
}

/// Rankings of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRankings {
    pub variant: Variant,
    /// Test ids retained by the eligibility filter.
    pub eligible: Vec<u64>,
    pub summed: Vec<InfluenceRanking>,
    pub per_epoch: Vec<(usize, Vec<InfluenceRanking>)>,
}

#[derive(Serialize, Deserialize)]
struct RankingMeta {
    variant: String,
    eligible: Vec<u64>,
    epochs: Vec<usize>,
}

struct Quiet;

impl EpochSink for Quiet {
    fn epoch_done(&mut self, _: &CheckpointStore, _: &crate::train::OptimizerState) -> Result<()> {
        Ok(())
    }
}

pub struct Pipeline {
    config: ExperimentConfig,
    workspace: Option<Workspace>,
    policy: Policy,
    data: OnceCell<GeneratedCorpus>,
    full: OnceCell<CheckpointStore>,
    traces: OnceCell<Vec<PruneTrace>>,
    sft: RefCell<BTreeMap<String, std::rc::Rc<CheckpointStore>>>,
    rankings: RefCell<BTreeMap<Variant, std::rc::Rc<VariantRankings>>>,
}

fn producer(stage: &str) -> String {
    let cmd = if stage == "data" {
        "gen-data".to_string()
    } else if stage == "train/full" || stage.starts_with("train/mono-") {
        "train --mode full".to_string()
    } else if stage.starts_with("train/") {
        "train --mode sft".to_string()
    } else if stage.starts_with("prune/") {
        "prune".to_string()
    } else if let Some(v) = stage.strip_prefix("influence/") {
        format!("influence --variant {v}")
    } else {
        "report".to_string()
    };
    format!("subnet-tda {cmd}")
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, workspace: Option<Workspace>, policy: Policy) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            workspace,
            policy,
            data: OnceCell::new(),
            full: OnceCell::new(),
            traces: OnceCell::new(),
            sft: RefCell::new(BTreeMap::new()),
            rankings: RefCell::new(BTreeMap::new()),
        })
    }

    /// In-memory pipeline that computes everything it needs.
    pub fn in_memory(config: ExperimentConfig) -> Result<Self> {
        Self::new(config, None, Policy::Auto)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn workspace(&self) -> Option<&Workspace> {
        self.workspace.as_ref()
    }

    pub fn languages(&self) -> Vec<String> {
        self.config.corpus.language_names()
    }

    fn may_compute(&self, stage: &str) -> bool {
        match &self.policy {
            Policy::Auto => true,
            Policy::Only(prefix) => stage.starts_with(prefix.as_str()),
        }
    }

    /// Loads a fresh stage, or computes it if the policy allows.
    pub(super) fn stage<T>(
        &self,
        stage: &str,
        input_hash: &str,
        load: impl FnOnce(&Path) -> Result<T>,
        build: impl FnOnce(Option<&Path>) -> Result<T>,
    ) -> Result<T> {
        let Some(ws) = &self.workspace else {
            return build(None);
        };
        if let StageState::Fresh = ws.check(stage, input_hash)? {
            log::debug!("{stage}: cached");
            return load(&ws.stage_dir(stage));
        }
        if !self.may_compute(stage) {
            return Err(Error::Dependency { missing: stage.to_string(), producer: producer(stage) });
        }
        log::info!("{stage}: computing");
        let started = Instant::now();
        // partial output from an interrupted run is kept for resumption unless forced
        let dir = if ws.force { ws.reset(stage)? } else { ws.stage_dir(stage) };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let value = build(Some(&dir))?;
        ws.finish(stage, input_hash, started)?;
        Ok(value)
    }

    // ---- data ----

    fn data_hash(&self) -> String {
        hash_json(&("data", &self.config.corpus))
    }

    pub fn data(&self) -> Result<&GeneratedCorpus> {
        if let Some(d) = self.data.get() {
            return Ok(d);
        }
        let names = self.languages();
        let d = self.stage(
            "data",
            &self.data_hash(),
            |dir| {
                Ok(GeneratedCorpus {
                    train: Corpus::load_jsonl(&dir.join("train.jsonl"), Split::Train, names.clone())?,
                    dev: Corpus::load_jsonl(&dir.join("dev.jsonl"), Split::Dev, names.clone())?,
                    test: Corpus::load_jsonl(&dir.join("test.jsonl"), Split::Test, names.clone())?,
                })
            },
            |dir| {
                let d = generate(&self.config.corpus)?;
                if let Some(dir) = dir {
                    d.train.save_jsonl(&dir.join("train.jsonl"))?;
                    d.dev.save_jsonl(&dir.join("dev.jsonl"))?;
                    d.test.save_jsonl(&dir.join("test.jsonl"))?;
                }
                Ok(d)
            },
        )?;
        Ok(self.data.get_or_init(|| d))
    }

    // ---- training ----

    fn init_params(&self) -> Result<Parameters> {
        init_model(&self.config.model, self.config.model_seed)
    }

    fn train_stage(
        &self,
        stage: &str,
        input_hash: &str,
        init: &Parameters,
        train: &Corpus,
        dev: &Corpus,
        config: &TrainConfig,
    ) -> Result<CheckpointStore> {
        self.stage(stage, input_hash, CheckpointStore::load, |dir| {
            match dir {
                Some(dir) => {
                    let resume = if CheckpointStore::exists(dir) {
                        match CheckpointStore::load_optimizer(dir)? {
                            Some(state) => Some((CheckpointStore::load(dir)?, state)),
                            None => None,
                        }
                    } else {
                        None
                    };
                    if let Some((s, _)) = &resume {
                        log::info!("{stage}: resuming after epoch {}", s.len());
                    }
                    train_resume(init, train, dev, config, resume, &mut DirSink(dir))
                }
                None => train_resume(init, train, dev, config, None, &mut Quiet),
            }
        })
    }

    fn full_hash(&self) -> String {
        hash_json(&("train-full", self.data_hash(), &self.config.model, self.config.model_seed, &self.config.train.full))
    }

    /// The multilingually fully fine-tuned model.
    pub fn full_model(&self) -> Result<&CheckpointStore> {
        if let Some(s) = self.full.get() {
            return Ok(s);
        }
        let d = self.data()?;
        let init = self.init_params()?;
        let s = self.train_stage("train/full", &self.full_hash(), &init, &d.train, &d.dev, &self.config.train.full)?;
        Ok(self.full.get_or_init(|| s))
    }

    fn mono_hash(&self, language: &str) -> String {
        hash_json(&("train-mono", self.full_hash(), language))
    }

    fn mono_model(&self, language: LanguageId) -> Result<CheckpointStore> {
        let d = self.data()?;
        let name = &self.languages()[language.index()];
        let train = language_slice(&d.train, language)?;
        let dev = language_slice(&d.dev, language)?;
        let init = self.init_params()?;
        self.train_stage(&format!("train/mono-{name}"), &self.mono_hash(name), &init, &train, &dev, &self.config.train.full)
    }

    // ---- pruning ----

    fn prune_hash(&self, language: &str) -> String {
        let source = match self.config.prune.source {
            IdentificationSource::Multilingual => self.full_hash(),
            IdentificationSource::Monolingual => self.mono_hash(language),
        };
        hash_json(&("prune", source, &self.config.prune, language))
    }

    fn masks_hash(&self) -> String {
        hash_json(&("masks", self.languages().iter().map(|l| self.prune_hash(l)).collect::<Vec<_>>()))
    }

    /// Pruning trace of one language.
    pub fn trace(&self, lang: LanguageId) -> Result<PruneTrace> {
        if let Some(t) = self.traces.get() {
            return Ok(t[lang.index()].clone());
        }
        let name = self.languages().get(lang.index()).cloned().ok_or_else(|| Error::Lookup(format!("language {lang}")))?;
        self.stage(&format!("prune/{name}"), &self.prune_hash(&name), PruneTrace::load, |dir| {
            let d = self.data()?;
            let params = match self.config.prune.source {
                IdentificationSource::Multilingual => self.full_model()?.last().expect("trained").params.clone(),
                IdentificationSource::Monolingual => self.mono_model(lang)?.last().expect("trained").params.clone(),
            };
            let train = language_slice(&d.train, lang)?;
            let dev = language_slice(&d.dev, lang)?;
            let (mask, trace) = find_subnetwork(&params, train.examples(), dev.examples(), &self.config.prune.config)?;
            log::info!("{name}: {} of {} heads kept ({:?})", mask.enabled_count(), mask.len(), trace.stop_reason);
            if let Some(dir) = dir {
                trace.save(dir)?;
                mask.save(&dir.join("mask.json"))?;
            }
            Ok(trace)
        })
    }

    /// Pruning traces, one per language.
    pub fn traces(&self) -> Result<&[PruneTrace]> {
        if let Some(t) = self.traces.get() {
            return Ok(t);
        }
        let out = (0..self.languages().len()).map(|i| self.trace(LanguageId(i as u16))).collect::<Result<Vec<_>>>()?;
        Ok(self.traces.get_or_init(|| out))
    }

    /// Identified subnetwork mask per language.
    pub fn masks(&self) -> Result<Vec<SubnetworkMask>> {
        let m = &self.config.model;
        Ok(self.traces()?.iter().map(|t| t.selected_mask(m.num_layers, m.heads_per_layer)).collect())
    }

    /// Shuffled copies of the identified masks; sparsity per language is kept.
    pub fn random_masks(&self, seed: u64) -> Result<Vec<SubnetworkMask>> {
        Ok(self
            .masks()?
            .iter()
            .enumerate()
            .map(|(l, m)| shuffle_mask(m, seed.wrapping_mul(1_000_003).wrapping_add(l as u64)))
            .collect())
    }

    // ---- sparse fine-tuning ----

    fn sft_label(random: Option<u64>) -> String {
        match random {
            None => "sft".to_string(),
            Some(s) => format!("sft-random-{s}"),
        }
    }

    fn sft_hash(&self, random: Option<u64>) -> String {
        let start = match self.config.train.sft_init {
            SftInit::Pretrained => String::new(),
            SftInit::FineTuned => self.full_hash(),
        };
        hash_json(&(
            "train-sft",
            start,
            self.data_hash(),
            &self.config.model,
            self.config.model_seed,
            &self.config.train.sft,
            self.config.train.sft_init,
            self.masks_hash(),
            random,
        ))
    }

    /// Sparse fine-tuning from the pretrained initialisation with the
    /// identified masks, or with shuffled masks for `Some(seed)`.
    pub fn sft_model(&self, random: Option<u64>) -> Result<std::rc::Rc<CheckpointStore>> {
        let label = Self::sft_label(random);
        if let Some(s) = self.sft.borrow().get(&label) {
            return Ok(s.clone());
        }
        let masks = match random {
            None => self.masks()?,
            Some(seed) => self.random_masks(seed)?,
        };
        let mut config = self.config.train.sft.clone();
        config.masks = masks;
        let d = self.data()?;
        let init = match self.config.train.sft_init {
            SftInit::Pretrained => self.init_params()?,
            SftInit::FineTuned => self.full_model()?.last().expect("trained").params.clone(),
        };
        let store = self.train_stage(&format!("train/{label}"), &self.sft_hash(random), &init, &d.train, &d.dev, &config)?;
        let rc = std::rc::Rc::new(store);
        self.sft.borrow_mut().insert(label, rc.clone());
        Ok(rc)
    }

    // ---- influence ----

    fn model_hash(&self, variant: &Variant) -> String {
        match variant {
            Variant::Sft => self.sft_hash(None),
            Variant::SftRandom(s) => self.sft_hash(Some(*s)),
            _ => self.full_hash(),
        }
    }

    fn influence_hash(&self, variant: &Variant) -> String {
        let masks = match variant {
            Variant::Full => String::new(),
            _ => self.masks_hash(),
        };
        hash_json(&(
            "influence",
            self.model_hash(variant),
            self.full_hash(),
            masks,
            &self.config.influence,
            variant.to_string(),
        ))
    }

    fn assignment(&self, variant: &Variant) -> Result<MaskAssignment> {
        let id = |l: &str| self.config.corpus.language_id(l);
        Ok(match variant {
            Variant::Full => MaskAssignment::full(&self.config.model),
            Variant::Subnet | Variant::Sft => MaskAssignment::PerLanguage(self.masks()?),
            Variant::Random(s) | Variant::SftRandom(s) => MaskAssignment::PerLanguage(self.random_masks(*s)?),
            Variant::MaskOf(l) => MaskAssignment::Uniform(self.masks()?[id(l)?.index()].clone()),
            Variant::Composed { op, a, b } => {
                let m = self.masks()?;
                MaskAssignment::Uniform(compose(&m[id(a)?.index()], &m[id(b)?.index()], *op)?)
            }
        })
    }

    fn variant_model(&self, variant: &Variant) -> Result<std::rc::Rc<CheckpointStore>> {
        match variant {
            Variant::Sft => self.sft_model(None),
            Variant::SftRandom(s) => self.sft_model(Some(*s)),
            _ => Ok(std::rc::Rc::new(self.full_model()?.clone())),
        }
    }

    /// Rankings for one variant over its eligible test examples.
    pub fn rankings(&self, variant: &Variant) -> Result<std::rc::Rc<VariantRankings>> {
        self.config.check_variant(variant)?;
        if let Some(r) = self.rankings.borrow().get(variant) {
            return Ok(r.clone());
        }
        let stage = format!("influence/{variant}");
        let load = |dir: &Path| -> Result<VariantRankings> {
            let meta_path = dir.join("rankings.json");
            let bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: RankingMeta = serde_json::from_slice(&bytes)?;
            let summed = read_rankings_csv(&dir.join("rankings.csv"))?;
            let per_epoch = meta
                .epochs
                .iter()
                .map(|&e| Ok((e, read_rankings_csv(&dir.join(format!("rankings_epoch_{e}.csv")))?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(VariantRankings { variant: variant.clone(), eligible: meta.eligible, summed, per_epoch })
        };
        let result = self.stage(&stage, &self.influence_hash(variant), load, |dir| {
            let d = self.data()?;
            let full = self.full_model()?;
            let model = self.variant_model(variant)?;
            let masks = self.assignment(variant)?;
            let baseline = MaskAssignment::full(&self.config.model);
            let full_last = &full.last().expect("trained").params;
            let model_last = &model.last().expect("trained").params;
            let eligible = eligible_tests(d.test.examples(), &[(model_last, &masks), (full_last, &baseline)])?;
            let tests: Vec<_> = d.test.examples().iter().filter(|e| eligible.contains(&e.id)).cloned().collect();
            log::info!("{variant}: {} of {} test examples eligible", tests.len(), d.test.len());
            let checkpoints: Vec<(usize, &Parameters)> = model.snapshots().iter().map(|s| (s.epoch, &s.params)).collect();
            let cache = match &self.workspace {
                Some(ws) => Some(SketchCache::new(ws.root.join("sketches"))?),
                None => None,
            };
            let train_hash = d.train.content_hash();
            let test_hash = d.test.content_hash();
            let set = compute_ranking_set(
                &checkpoints,
                SketchSource { corpus_hash: &train_hash, examples: d.train.examples() },
                SketchSource { corpus_hash: &test_hash, examples: &tests },
                &masks,
                &self.config.influence,
                cache.as_ref(),
                variant.keeps_epochs(),
            )?;
            let out = VariantRankings {
                variant: variant.clone(),
                eligible: eligible.into_iter().collect(),
                summed: set.summed,
                per_epoch: set.per_epoch,
            };
            if let Some(dir) = dir {
                write_rankings_csv(&dir.join("rankings.csv"), &out.summed)?;
                for (e, r) in &out.per_epoch {
                    write_rankings_csv(&dir.join(format!("rankings_epoch_{e}.csv")), r)?;
                }
                let meta = RankingMeta {
                    variant: variant.to_string(),
                    eligible: out.eligible.clone(),
                    epochs: out.per_epoch.iter().map(|(e, _)| *e).collect(),
                };
                let path = dir.join("rankings.json");
                std::fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
            }
            Ok(out)
        })?;
        if let Some(ws) = &self.workspace {
            if ws.root.join("sketches").exists() {
                ws.finish("sketches", "content-addressed", Instant::now())?;
            }
        }
        let rc = std::rc::Rc::new(result);
        self.rankings.borrow_mut().insert(variant.clone(), rc.clone());
        Ok(rc)
    }

    /// Hash of every input the report depends on.
    pub fn report_hash(&self) -> String {
        let parts: Vec<String> = self.config.variants().iter().map(|v| self.influence_hash(v)).collect();
        hash_json(&("report", parts, self.config.hash()))
    }

    /// Language of every test and train example id.
    pub fn language_maps(&self) -> Result<(HashMap<u64, LanguageId>, HashMap<u64, LanguageId>)> {
        let d = self.data()?;
        let map = |c: &Corpus| c.examples().iter().map(|e| (e.id, e.language)).collect();
        Ok((map(&d.test), map(&d.train)))
    }
}

/// Keeps only rankings whose test id is in `ids`.
pub fn restrict(rankings: &[InfluenceRanking], ids: &BTreeSet<u64>) -> Vec<InfluenceRanking> {
    rankings.iter().filter(|r| ids.contains(&r.test_id)).cloned().collect()
}
