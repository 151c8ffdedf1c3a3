//! Self-checks run by the `verify` command.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{compose, contribution_matrix, delta_matrix, pearson, similarity_matrix, ComposeOp, Sign};
use crate::data::generate;
use crate::error::Result;
use crate::influence::{build_projector, rank_top_m, sketch_gradient, tracin_score, GradSketch, ProjectionScheme};
use crate::model::{self, Example, LanguageId, ModelConfig, Parameters, SubnetworkMask};
use crate::prune::shuffle_mask;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(FD_FLOOR)).fold(0.0, f64::max)
}

fn micro_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let dim = [8, 16][rng.random_range(0..2)];
    ModelConfig {
        num_layers: rng.random_range(1..=2),
        heads_per_layer: heads,
        model_dim: dim,
        ffn_dim: 2 * dim,
        vocab_size: 12,
        max_seq_len: 8,
        num_classes: rng.random_range(2..=3),
        classifier_hidden_dim: 6,
    }
}

fn random_example(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Example {
    let len = rng.random_range(3..=cfg.max_seq_len);
    let mut tokens = vec![model::CLS_TOKEN];
    tokens.extend((1..len).map(|_| rng.random_range(model::NUM_SPECIAL_TOKENS..cfg.vocab_size as u32)));
    Example { id: 0, tokens, label: rng.random_range(0..cfg.num_classes), language: LanguageId(0), latent_id: 0 }
}

fn gradient_check() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    for trial in 0..5 {
        let cfg = micro_config(&mut rng);
        let mut params = Parameters::init(&cfg, trial)?;
        for v in params.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let ex = random_example(&mut rng, &cfg);
        let mask = SubnetworkMask::full_for(&cfg);
        let analytic = model::loss_and_grad(&params, &ex, &mask)?.values;
        let mut p = params.clone();
        let mut numeric = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + FD_STEP;
            let up = model::loss(&p, &ex, &mask)?;
            p.values_mut()[i] = orig - FD_STEP;
            let down = model::loss(&p, &ex, &mask)?;
            p.values_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
        let gates = mask.gate_values();
        let analytic = model::gate_grad(&params, &ex, &mask)?.values;
        let mut g = gates.clone();
        let mut numeric = Vec::with_capacity(g.len());
        for i in 0..g.len() {
            g[i] = gates[i] + FD_STEP;
            let up = model::loss_with_gates(&params, &ex, &g)?;
            g[i] = gates[i] - FD_STEP;
            let down = model::loss_with_gates(&params, &ex, &g)?;
            g[i] = gates[i];
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    Ok(CheckResult {
        name: "gradient-check".into(),
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.3e} over 5 micro models (parameters and gates)"),
    })
}

fn sketch_fidelity(config: &ExperimentConfig) -> Result<CheckResult> {
    let mut corpus = config.corpus.clone();
    corpus.train_per_language = corpus.train_per_language.min(8);
    corpus.test_per_language = corpus.test_per_language.min(5);
    let data = generate(&corpus)?;
    let params = model::init_model(&config.model, config.model_seed)?;
    let mask = SubnetworkMask::full_for(&config.model);
    let grads = |exs: &[Example]| -> Result<Vec<model::GradVector>> {
        exs.iter().map(|e| model::loss_and_grad(&params, e, &mask)).collect()
    };
    let train = grads(data.train.examples())?;
    let test = grads(data.test.examples())?;
    let dim = config.influence.dim;
    let layout = params.shared_layout();
    let sketched = build_projector(config.influence.projector_seed, dim, layout.clone(), config.influence.scheme)?;
    let exact = build_projector(0, params.len(), layout, ProjectionScheme::Exact)?;
    let sk = |p: &crate::influence::SketchProjector, gs: &[model::GradVector]| -> Result<Vec<GradSketch>> {
        gs.iter().map(|g| sketch_gradient(p, g)).collect()
    };
    let (tr_s, te_s, tr_e, te_e) = (sk(&sketched, &train)?, sk(&sketched, &test)?, sk(&exact, &train)?, sk(&exact, &test)?);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..tr_s.len() {
        for j in 0..te_s.len() {
            x.push(tracin_score(std::slice::from_ref(&tr_e[i]), std::slice::from_ref(&te_e[j]), true)?);
            y.push(tracin_score(std::slice::from_ref(&tr_s[i]), std::slice::from_ref(&te_s[j]), true)?);
        }
    }
    let r = pearson(&x, &y)?.r;
    let bar = if dim >= 256 { 0.95 } else { 0.85 };
    Ok(CheckResult {
        name: "sketch-fidelity".into(),
        passed: r >= bar,
        detail: format!("r = {r:.4} between sketched (d = {dim}) and exact cosine over {} pairs, p = {}; bar {bar}", x.len(), params.len()),
    })
}

fn mask_algebra() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = Vec::new();
    for t in 0..200 {
        let bits = |rng: &mut ChaCha8Rng| (0..12).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>();
        let a = SubnetworkMask::from_bits(3, 4, bits(&mut rng))?;
        let b = SubnetworkMask::from_bits(3, 4, bits(&mut rng))?;
        let u = compose(&a, &b, ComposeOp::Union)?;
        let i = compose(&a, &b, ComposeOp::Intersect)?;
        if u != compose(&b, &a, ComposeOp::Union)? || i != compose(&b, &a, ComposeOp::Intersect)? {
            failures.push(format!("trial {t}: composition not commutative"));
        }
        if u.enabled_count() + i.enabled_count() != a.enabled_count() + b.enabled_count() {
            failures.push(format!("trial {t}: |a∪b| + |a∩b| != |a| + |b|"));
        }
        if compose(&a, &a, ComposeOp::Union)? != a || compose(&a, &a, ComposeOp::Intersect)? != a {
            failures.push(format!("trial {t}: composition not idempotent"));
        }
        if shuffle_mask(&a, t).enabled_count() != a.enabled_count() {
            failures.push(format!("trial {t}: shuffle changed sparsity"));
        }
    }
    Ok(CheckResult {
        name: "mask-algebra".into(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() { "200 random mask pairs".into() } else { failures.join("; ") },
    })
}

fn matrix_invariants() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let names: Vec<String> = (0..4).map(|i| format!("L{i}")).collect();
    let train_lang: HashMap<u64, LanguageId> = (0..40).map(|i| (i, LanguageId((i % 4) as u16))).collect();
    let test_lang: HashMap<u64, LanguageId> = (0..12).map(|i| (i, LanguageId((i % 4) as u16))).collect();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut rank = |_: usize| -> Result<Vec<crate::influence::InfluenceRanking>> {
            (0..12u64)
                .map(|t| {
                    let scores: Vec<(u64, f64)> = (0..40).map(|i| (i, rng.random_range(-1.0..1.0))).collect();
                    rank_top_m(t, &scores, 7)
                })
                .collect()
        };
        let (ra, rb) = (rank(0)?, rank(1)?);
        for sign in [Sign::Positive, Sign::Negative] {
            let a = contribution_matrix(&ra, &test_lang, &train_lang, &names, sign, "a")?;
            let b = contribution_matrix(&rb, &test_lang, &train_lang, &names, sign, "b")?;
            let d = delta_matrix(&a, &b)?;
            for row in &a.values {
                worst = worst.max((row.iter().sum::<f64>() - 100.0).abs());
            }
            for row in &d.values {
                worst = worst.max(row.iter().sum::<f64>().abs());
            }
        }
    }
    let masks: Vec<SubnetworkMask> = (0..4)
        .map(|_| {
            let mut bits: Vec<bool> = (0..12).map(|_| rng.random_bool(0.5)).collect();
            bits[0] = true;
            SubnetworkMask::from_bits(3, 4, bits)
        })
        .collect::<Result<_>>()?;
    let s = similarity_matrix(&masks, &names, None)?;
    let mut sym = 0.0f64;
    for i in 0..4 {
        sym = sym.max((s.values[i][i] - 1.0).abs());
        for j in 0..4 {
            sym = sym.max((s.values[i][j] - s.values[j][i]).abs());
        }
    }
    Ok(CheckResult {
        name: "matrix-invariants".into(),
        passed: worst <= 1e-9 && sym <= 1e-12,
        detail: format!("max row-sum deviation {worst:.2e}; similarity asymmetry/diagonal deviation {sym:.2e}"),
    })
}

/// Runs every suite; individual failures are reported, not raised.
pub fn run(config: &ExperimentConfig) -> VerifyReport {
    let suites: [(&str, &dyn Fn() -> Result<CheckResult>); 4] = [
        ("gradient-check", &gradient_check),
        ("sketch-fidelity", &|| sketch_fidelity(config)),
        ("mask-algebra", &mask_algebra),
        ("matrix-invariants", &matrix_invariants),
    ];
    let checks = suites
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckResult { name: name.to_string(), passed: false, detail: e.to_string() })
        })
        .collect();
    VerifyReport { checks }
}
