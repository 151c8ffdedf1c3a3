//! TracIn over per-epoch checkpoints with cosine normalization and random
//! projection sketches; top-m retrieval per test example.

mod projector;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use projector::{build_projector, ProjectionScheme, SketchProjector};
pub use store::{read_sketches, write_sketches, SketchCache, SketchKey, SketchSet};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, Example, GradVector, LanguageId, Parameters, SubnetworkMask};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    /// Sketch dimension d.
    pub dim: usize,
    /// Retrieved examples per sign.
    pub top_m: usize,
    #[serde(default = "default_true")]
    pub normalize: bool,
    pub projector_seed: u64,
    pub scheme: ProjectionScheme,
    /// Whether classifier parameters contribute to the gradient.
    #[serde(default = "default_true")]
    pub include_classifier: bool,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        InfluenceConfig {
            dim: 256,
            top_m: 100,
            normalize: true,
            projector_seed: 0,
            scheme: ProjectionScheme::DenseFull,
            include_classifier: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradSketch {
    pub values: Vec<f64>,
    /// Norm of the unprojected gradient.
    pub grad_norm: f64,
}

pub fn sketch_gradient(projector: &SketchProjector, grad: &GradVector) -> Result<GradSketch> {
    Ok(GradSketch { values: projector.project(&grad.values)?, grad_norm: linalg::norm(&grad.values) })
}

/// Σₑ ⟨uₑ, vₑ⟩, or Σₑ cos(uₑ, vₑ) with cos(·, 0) = 0 when normalized.
pub fn tracin_score(train: &[GradSketch], test: &[GradSketch], normalize: bool) -> Result<f64> {
    if train.len() != test.len() {
        return Err(Error::contract(format!("{} train checkpoints vs {} test checkpoints", train.len(), test.len())));
    }
    let mut total = 0.0;
    for (u, v) in train.iter().zip(test) {
        if u.values.len() != v.values.len() {
            return Err(Error::contract("sketch dimensions differ"));
        }
        total += if normalize { linalg::cosine(&u.values, &v.values) } else { linalg::dot(&u.values, &v.values) };
    }
    Ok(total)
}

/// Which mask a model variant applies to a test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskAssignment {
    /// The same mask for every language.
    Uniform(SubnetworkMask),
    /// Mask `i` for language id `i`.
    PerLanguage(Vec<SubnetworkMask>),
}

impl MaskAssignment {
    pub fn full(config: &model::ModelConfig) -> Self {
        MaskAssignment::Uniform(SubnetworkMask::full_for(config))
    }

    pub fn mask_for(&self, language: LanguageId) -> Result<&SubnetworkMask> {
        match self {
            MaskAssignment::Uniform(m) => Ok(m),
            MaskAssignment::PerLanguage(ms) => {
                ms.get(language.index()).ok_or_else(|| Error::Lookup(format!("no mask for language {language}")))
            }
        }
    }
}

/// Test ids correctly classified by every variant.
pub fn eligible_tests(test: &[Example], variants: &[(&Parameters, &MaskAssignment)]) -> Result<BTreeSet<u64>> {
    if variants.is_empty() {
        return Err(Error::contract("eligibility needs at least one model variant"));
    }
    let keep: Vec<bool> = test
        .par_iter()
        .map(|e| {
            for (params, masks) in variants {
                if model::predict(params, e, masks.mask_for(e.language)?)? != e.label {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    Ok(test.iter().zip(keep).filter(|(_, k)| *k).map(|(e, _)| e.id).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedTrain {
    pub train_id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceRanking {
    pub test_id: u64,
    pub m: usize,
    /// Largest scores, descending.
    pub positive: Vec<RankedTrain>,
    /// Most negative scores, ascending.
    pub negative: Vec<RankedTrain>,
}

/// Top-m in each direction; equal scores are ordered by ascending train id.
pub fn rank_top_m(test_id: u64, scores: &[(u64, f64)], m: usize) -> Result<InfluenceRanking> {
    if m > scores.len() {
        return Err(Error::contract(format!("m = {m} exceeds {} training examples", scores.len())));
    }
    if let Some((id, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::Numerical { example: Some(*id), message: "NaN influence score".into() });
    }
    let mut desc: Vec<(u64, f64)> = scores.to_vec();
    desc.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut asc: Vec<(u64, f64)> = scores.to_vec();
    asc.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let take = |v: &[(u64, f64)]| v[..m].iter().map(|&(train_id, score)| RankedTrain { train_id, score }).collect();
    Ok(InfluenceRanking { test_id, m, positive: take(&desc), negative: take(&asc) })
}

fn example_gradient(params: &Parameters, ex: &Example, mask: &SubnetworkMask, include_classifier: bool) -> Result<GradVector> {
    let mut g = model::loss_and_grad(params, ex, mask).map_err(|e| match e {
        Error::Numerical { message, .. } => Error::Numerical { example: Some(ex.id), message },
        other => other,
    })?;
    if !include_classifier {
        for seg in params.layout().segments.iter().filter(|s| s.classifier) {
            g.values[seg.range()].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(g)
}

/// Sketches of every example at one checkpoint under one mask.
pub fn compute_sketch_set(
    params: &Parameters,
    examples: &[Example],
    mask: &SubnetworkMask,
    projector: &SketchProjector,
    include_classifier: bool,
) -> Result<SketchSet> {
    let rows: Vec<Vec<f64>> = examples
        .par_iter()
        .map(|e| projector.project(&example_gradient(params, e, mask, include_classifier)?.values))
        .collect::<Result<_>>()?;
    Ok(SketchSet { ids: examples.iter().map(|e| e.id).collect(), dim: projector.dim(), rows: rows.concat() })
}

/// Scores for every (test, train) pair: `out[t][i]`.
pub fn score_matrix(train: &[SketchSet], test: &[SketchSet], normalize: bool) -> Result<Vec<Vec<f64>>> {
    if train.len() != test.len() || train.is_empty() {
        return Err(Error::contract("train and test sketches need the same non-zero checkpoint count"));
    }
    let n_train = train[0].len();
    let n_test = test[0].len();
    let norms = |s: &SketchSet| -> Vec<f64> { (0..s.len()).map(|i| linalg::norm(s.row(i))).collect() };
    let train_norms: Vec<Vec<f64>> = train.iter().map(norms).collect();
    let test_norms: Vec<Vec<f64>> = test.iter().map(norms).collect();
    Ok((0..n_test)
        .into_par_iter()
        .map(|t| {
            (0..n_train)
                .map(|i| {
                    let mut total = 0.0;
                    for e in 0..train.len() {
                        let dot = linalg::dot(train[e].row(i), test[e].row(t));
                        total += if !normalize {
                            dot
                        } else {
                            let (nu, nv) = (train_norms[e][i], test_norms[e][t]);
                            if nu == 0.0 || nv == 0.0 {
                                0.0
                            } else {
                                dot / (nu * nv)
                            }
                        };
                    }
                    total
                })
                .collect()
        })
        .collect())
}

/// Provenance of the sketches of one corpus, for cache keys.
pub struct SketchSource<'a> {
    pub corpus_hash: &'a str,
    pub examples: &'a [Example],
}

fn sketch_checkpoints(
    checkpoints: &[(usize, &Parameters)],
    source: &SketchSource,
    mask: &SubnetworkMask,
    projector: &SketchProjector,
    config: &InfluenceConfig,
    cache: Option<&SketchCache>,
) -> Result<Vec<SketchSet>> {
    checkpoints
        .iter()
        .map(|&(epoch, params)| {
            let key = SketchKey {
                corpus_hash: source.corpus_hash.to_string(),
                epoch,
                projector_seed: config.projector_seed,
                scheme: config.scheme,
                dim: projector.dim(),
                mask_hash: mask.hash(),
                include_classifier: config.include_classifier,
                params_hash: crate::hashing::sha256_hex(&params.to_bytes()),
            };
            if let Some(c) = cache {
                if let Some(set) = c.get(&key)? {
                    return Ok(set);
                }
            }
            let set = compute_sketch_set(params, source.examples, mask, projector, config.include_classifier)?;
            match cache {
                Some(c) => {
                    c.put(&key, &set)?;
                    Ok(store::as_stored(set, config.scheme))
                }
                None => Ok(set),
            }
        })
        .collect()
}

/// Rankings from summed scores plus, optionally, from each checkpoint alone.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingSet {
    pub summed: Vec<InfluenceRanking>,
    /// `(epoch, rankings)` per checkpoint; empty unless requested.
    pub per_epoch: Vec<(usize, Vec<InfluenceRanking>)>,
}

/// Rankings for each test example. Train gradients are taken under the mask
/// the variant applies to the test example's language.
pub fn compute_rankings(
    checkpoints: &[(usize, &Parameters)],
    train: SketchSource,
    test: SketchSource,
    masks: &MaskAssignment,
    config: &InfluenceConfig,
    cache: Option<&SketchCache>,
) -> Result<Vec<InfluenceRanking>> {
    Ok(compute_ranking_set(checkpoints, train, test, masks, config, cache, false)?.summed)
}

pub fn compute_ranking_set(
    checkpoints: &[(usize, &Parameters)],
    train: SketchSource,
    test: SketchSource,
    masks: &MaskAssignment,
    config: &InfluenceConfig,
    cache: Option<&SketchCache>,
    per_epoch: bool,
) -> Result<RankingSet> {
    let first = checkpoints.first().ok_or_else(|| Error::contract("no checkpoints"))?.1;
    let projector = build_projector(config.projector_seed, config.dim, first.shared_layout(), config.scheme)?;
    // group test examples by the mask they are evaluated with
    let mut groups: BTreeMap<String, (SubnetworkMask, Vec<Example>)> = BTreeMap::new();
    for e in test.examples {
        let mask = masks.mask_for(e.language)?;
        groups.entry(mask.hash()).or_insert_with(|| (mask.clone(), Vec::new())).1.push(e.clone());
    }
    let mut summed = Vec::with_capacity(test.examples.len());
    let mut epochs: Vec<(usize, Vec<InfluenceRanking>)> =
        if per_epoch { checkpoints.iter().map(|&(e, _)| (e, Vec::new())).collect() } else { Vec::new() };
    for (mask, tests) in groups.values() {
        let train_sets = sketch_checkpoints(checkpoints, &train, mask, &projector, config, cache)?;
        let group_source = SketchSource { corpus_hash: test.corpus_hash, examples: tests };
        let test_sets = sketch_checkpoints(checkpoints, &group_source, mask, &projector, config, None)?;
        let ids = &train_sets[0].ids;
        let rank_all = |scores: Vec<Vec<f64>>, out: &mut Vec<InfluenceRanking>| -> Result<()> {
            for (ex, row) in tests.iter().zip(scores) {
                let pairs: Vec<(u64, f64)> = ids.iter().copied().zip(row).collect();
                out.push(rank_top_m(ex.id, &pairs, config.top_m)?);
            }
            Ok(())
        };
        rank_all(score_matrix(&train_sets, &test_sets, config.normalize)?, &mut summed)?;
        for (i, (_, out)) in epochs.iter_mut().enumerate() {
            let scores = score_matrix(&train_sets[i..i + 1], &test_sets[i..i + 1], config.normalize)?;
            rank_all(scores, out)?;
        }
    }
    summed.sort_by_key(|r| r.test_id);
    for (_, out) in &mut epochs {
        out.sort_by_key(|r| r.test_id);
    }
    Ok(RankingSet { summed, per_epoch: epochs })
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingRow {
    test_id: u64,
    rank: usize,
    train_id: u64,
    score: f64,
    sign: String,
}

/// CSV with columns `test_id, rank, train_id, score, sign`; rank is 1-based.
pub fn write_rankings_csv(path: &Path, rankings: &[InfluenceRanking]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rankings {
        for (sign, list) in [("positive", &r.positive), ("negative", &r.negative)] {
            for (i, item) in list.iter().enumerate() {
                w.serialize(RankingRow {
                    test_id: r.test_id,
                    rank: i + 1,
                    train_id: item.train_id,
                    score: item.score,
                    sign: sign.into(),
                })?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rankings_csv(path: &Path) -> Result<Vec<InfluenceRanking>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_test: BTreeMap<u64, InfluenceRanking> = BTreeMap::new();
    for (i, row) in reader.deserialize::<RankingRow>().enumerate() {
        let row = row.map_err(|e| Error::format(Some(i + 1), e.to_string()))?;
        let r = by_test.entry(row.test_id).or_insert_with(|| InfluenceRanking {
            test_id: row.test_id,
            m: 0,
            positive: Vec::new(),
            negative: Vec::new(),
        });
        let list = match row.sign.as_str() {
            "positive" => &mut r.positive,
            "negative" => &mut r.negative,
            other => return Err(Error::format(Some(i + 1), format!("unknown sign {other}"))),
        };
        if row.rank != list.len() + 1 {
            return Err(Error::format(Some(i + 1), "ranks are not consecutive"));
        }
        list.push(RankedTrain { train_id: row.train_id, score: row.score });
    }
    let mut out: Vec<InfluenceRanking> = by_test.into_values().collect();
    for r in &mut out {
        r.m = r.positive.len();
    }
    Ok(out)
}
