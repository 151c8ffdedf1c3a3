//! Subnetwork identification by iterative head pruning, and random baselines.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Example, Parameters, SubnetworkMask};

/// Mean absolute gate gradient per head, row-major `layers × heads`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadImportanceMap {
    pub layers: usize,
    pub heads: usize,
    pub values: Vec<f64>,
    /// Number of examples the mean was taken over.
    pub examples: usize,
}

impl HeadImportanceMap {
    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.heads + head]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub threshold: f64,
    pub rate: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { threshold: 0.95, rate: 0.10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The next iterate fell below the accuracy threshold.
    Threshold,
    /// Fewer than k heads were left to prune.
    Exhausted,
    /// Already the first iterate fell below the threshold.
    NonePrunable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneIteration {
    pub mask: SubnetworkMask,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneTrace {
    pub base_accuracy: f64,
    pub threshold: f64,
    pub rate: f64,
    pub k: usize,
    /// Every evaluated iterate in order, including the one that stopped the loop.
    pub iterations: Vec<PruneIteration>,
    /// Index into `iterations` of the returned mask; `None` for the all-ones mask.
    pub selected: Option<usize>,
    pub stop_reason: StopReason,
}

#[derive(Serialize, Deserialize)]
struct TraceFileEntry {
    mask_file: String,
    dev_accuracy: f64,
    disabled: usize,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    base_accuracy: f64,
    threshold: f64,
    rate: f64,
    k: usize,
    selected: Option<usize>,
    stop_reason: StopReason,
    iterations: Vec<TraceFileEntry>,
}

impl PruneTrace {
    pub fn selected_mask(&self, layers: usize, heads: usize) -> SubnetworkMask {
        match self.selected {
            Some(i) => self.iterations[i].mask.clone(),
            None => SubnetworkMask::ones(layers, heads),
        }
    }

    /// Writes `trace.json` plus one mask JSON per iteration into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut iterations = Vec::with_capacity(self.iterations.len());
        for (i, it) in self.iterations.iter().enumerate() {
            let mask_file = format!("iter_{:03}.json", i + 1);
            it.mask.save(&dir.join(&mask_file))?;
            iterations.push(TraceFileEntry { mask_file, dev_accuracy: it.dev_accuracy, disabled: it.mask.sparsity() });
        }
        let file = TraceFile {
            base_accuracy: self.base_accuracy,
            threshold: self.threshold,
            rate: self.rate,
            k: self.k,
            selected: self.selected,
            stop_reason: self.stop_reason,
            iterations,
        };
        let path = dir.join("trace.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("trace.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let file: TraceFile = serde_json::from_slice(&bytes)?;
        let iterations = file
            .iterations
            .iter()
            .map(|e| Ok(PruneIteration { mask: SubnetworkMask::load(&dir.join(&e.mask_file))?, dev_accuracy: e.dev_accuracy }))
            .collect::<Result<Vec<_>>>()?;
        Ok(PruneTrace {
            base_accuracy: file.base_accuracy,
            threshold: file.threshold,
            rate: file.rate,
            k: file.k,
            iterations,
            selected: file.selected,
            stop_reason: file.stop_reason,
        })
    }
}

/// Mean over `examples` of |∂L/∂ξ| at `mask`; disabled heads score 0.
pub fn head_importance(params: &Parameters, examples: &[Example], mask: &SubnetworkMask) -> Result<HeadImportanceMap> {
    if examples.is_empty() {
        return Err(Error::contract("head importance needs a non-empty slice"));
    }
    mask.check_shape(params.config())?;
    let grads: Vec<model::GateGrad> =
        examples.par_iter().map(|e| model::gate_grad(params, e, mask)).collect::<Result<_>>()?;
    let mut values = vec![0.0; mask.len()];
    for g in &grads {
        for (v, x) in values.iter_mut().zip(&g.values) {
            *v += x.abs();
        }
    }
    let n = examples.len() as f64;
    for (v, &on) in values.iter_mut().zip(mask.bits()) {
        *v = if on { *v / n } else { 0.0 };
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { example: None, message: "non-finite head importance".into() });
    }
    Ok(HeadImportanceMap { layers: mask.layers(), heads: mask.heads(), values, examples: examples.len() })
}

/// Heads removed per pruning step, counted against the total head count.
pub fn heads_per_step(total_heads: usize, rate: f64) -> usize {
    ((rate * total_heads as f64).floor() as usize).max(1)
}

/// Disables the k enabled heads of lowest importance; ties go to the lower (layer, head).
pub fn prune_step(mask: &SubnetworkMask, importance: &HeadImportanceMap, rate: f64) -> Result<SubnetworkMask> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::contract(format!("prune rate {rate} outside (0, 1)")));
    }
    if importance.layers != mask.layers() || importance.heads != mask.heads() {
        return Err(Error::contract("importance map and mask shapes differ"));
    }
    let k = heads_per_step(mask.len(), rate);
    let mut enabled: Vec<usize> = (0..mask.len()).filter(|&i| mask.bits()[i]).collect();
    if enabled.is_empty() {
        return Err(Error::contract("all heads are already disabled"));
    }
    if enabled.len() < k {
        return Err(Error::contract(format!("only {} heads enabled, cannot remove {k}", enabled.len())));
    }
    // stable sort keeps lexicographic order among equal scores
    enabled.sort_by(|&a, &b| importance.values[a].total_cmp(&importance.values[b]));
    let mut bits = mask.bits().to_vec();
    for &i in &enabled[..k] {
        bits[i] = false;
    }
    SubnetworkMask::from_bits(mask.layers(), mask.heads(), bits)
}

/// Iterative pruning on one language: importance on `train`, stopping rule on `dev`.
pub fn find_subnetwork(
    params: &Parameters,
    train: &[Example],
    dev: &[Example],
    config: &PruneConfig,
) -> Result<(SubnetworkMask, PruneTrace)> {
    if !(config.threshold >= 0.0 && config.threshold <= 1.0) {
        return Err(Error::contract(format!("threshold {} outside [0, 1]", config.threshold)));
    }
    let cfg = params.config();
    let full = SubnetworkMask::full_for(cfg);
    let k = heads_per_step(full.len(), config.rate);
    let base_accuracy = model::evaluate(params, dev, &full)?;
    let floor = config.threshold * base_accuracy;
    let mut trace = PruneTrace {
        base_accuracy,
        threshold: config.threshold,
        rate: config.rate,
        k,
        iterations: Vec::new(),
        selected: None,
        stop_reason: StopReason::Exhausted,
    };
    let mut current = full;
    while current.enabled_count() >= k {
        let importance = head_importance(params, train, &current)?;
        let candidate = prune_step(&current, &importance, config.rate)?;
        let dev_accuracy = model::evaluate(params, dev, &candidate)?;
        log::debug!("pruned to {} heads: dev accuracy {dev_accuracy:.4}", candidate.enabled_count());
        trace.iterations.push(PruneIteration { mask: candidate.clone(), dev_accuracy });
        if dev_accuracy < floor {
            trace.stop_reason =
                if trace.selected.is_none() { StopReason::NonePrunable } else { StopReason::Threshold };
            break;
        }
        trace.selected = Some(trace.iterations.len() - 1);
        current = candidate;
    }
    Ok((trace.selected_mask(cfg.num_layers, cfg.heads_per_layer), trace))
}

/// Uniformly random permutation of the mask bits; sparsity is preserved.
pub fn shuffle_mask(mask: &SubnetworkMask, seed: u64) -> SubnetworkMask {
    let mut bits = mask.bits().to_vec();
    bits.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    SubnetworkMask::from_bits(mask.layers(), mask.heads(), bits).expect("same length")
}
