//! Gated post-norm encoder with exact reverse-mode gradients.
//!
//! Per layer: `Y = LN1(X + Σ_h ξ_h·softmax(Q_h K_hᵀ/√d_h) V_h · Wo_h + bo)`,
//! then `X' = LN2(Y + gelu(Y W1 + b1) W2 + b2)`. The classifier reads the
//! leading-token state through one tanh hidden layer.
//!
//! Gates multiply each head's output before the output projection, so a
//! zero gate removes the head's contribution and zeroes every gradient of
//! that head's parameters exactly.

use serde::{Deserialize, Serialize};

use super::example::Example;
use super::mask::SubnetworkMask;
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::linalg::{add_row_bias, col_sum_acc, dot, matmul, matmul_nt_acc, matmul_tn_acc};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Loss gradient over the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
    pub loss: f64,
}

/// ∂L/∂ξ for every head at the current gate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateGrad {
    pub layers: usize,
    pub heads: usize,
    /// Row-major `layers × heads`.
    pub values: Vec<f64>,
    /// True where the head is disabled in the mask the gradient was taken at.
    pub disabled: Vec<bool>,
    pub loss: f64,
}

impl GateGrad {
    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.heads + head]
    }
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    out: Vec<f64>,
}

struct HeadCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    out: Vec<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    heads: Vec<HeadCache>,
    norm1: NormCache,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    norm2: NormCache,
}

struct ForwardCache {
    n: usize,
    norm_emb: NormCache,
    layers: Vec<LayerCache>,
    cls_hidden: Vec<f64>,
    probs: Vec<f64>,
    loss_terms: Vec<f64>,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> NormCache {
    let d = gain.len();
    let n = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; n];
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[i * d + j] = h;
            out[i * d + j] = gain[j] * h + bias[j];
        }
    }
    NormCache { xhat, inv_std, out }
}

/// Backward through layer norm; accumulates gain/bias grads and returns dx.
fn layer_norm_back(dy: &[f64], cache: &NormCache, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
    let d = gain.len();
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let sum: f64 = dxhat.iter().sum();
        let sum_x: f64 = dot(&dxhat, xh);
        let scale = cache.inv_std[i] / d as f64;
        for j in 0..d {
            dx[i * d + j] = scale * (d as f64 * dxhat[j] - sum - xh[j] * sum_x);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn run_forward(params: &Parameters, example: &Example, gates: Option<&[f64]>) -> ForwardCache {
    let c = params.config();
    let lay = params.layout();
    let w = params.values();
    let d = c.model_dim;
    let hd = c.head_dim();
    let f = c.ffn_dim;
    let n = example.tokens.len();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut emb = vec![0.0; n * d];
    for (i, (&t, s)) in example.tokens.iter().zip(example.segment_ids()).enumerate() {
        let tok = &w[lay.tok_emb + t as usize * d..][..d];
        let pos = &w[lay.pos_emb + i * d..][..d];
        let seg = &w[lay.seg_emb + s * d..][..d];
        for j in 0..d {
            emb[i * d + j] = tok[j] + pos[j] + seg[j];
        }
    }
    let norm_emb = layer_norm(&emb, &w[lay.emb_ln_gain..][..d], &w[lay.emb_ln_bias..][..d]);

    let mut x = norm_emb.out.clone();
    let mut layers = Vec::with_capacity(c.num_layers);
    for (l, lo) in lay.layers.iter().enumerate() {
        let mut attn = vec![0.0; n * d];
        let mut heads = Vec::with_capacity(c.heads_per_layer);
        let mut proj = vec![0.0; n * d];
        for (h, ho) in lo.heads.iter().enumerate() {
            let mut q = vec![0.0; n * hd];
            let mut k = vec![0.0; n * hd];
            let mut v = vec![0.0; n * hd];
            matmul(&x, &w[ho.wq..][..d * hd], &mut q, n, d, hd);
            add_row_bias(&mut q, &w[ho.bq..][..hd]);
            matmul(&x, &w[ho.wk..][..d * hd], &mut k, n, d, hd);
            add_row_bias(&mut k, &w[ho.bk..][..hd]);
            matmul(&x, &w[ho.wv..][..d * hd], &mut v, n, d, hd);
            add_row_bias(&mut v, &w[ho.bv..][..hd]);

            let mut probs = vec![0.0; n * n];
            matmul_nt_acc(&q, &k, &mut probs, n, hd, n);
            for row in probs.chunks_exact_mut(n) {
                row.iter_mut().for_each(|s| *s *= scale);
                softmax_in_place(row);
            }
            let mut out = vec![0.0; n * hd];
            matmul(&probs, &v, &mut out, n, n, hd);

            let gated: Vec<f64> = match gates {
                Some(g) => {
                    let gv = g[l * c.heads_per_layer + h];
                    out.iter().map(|o| gv * o).collect()
                }
                None => out.clone(),
            };
            matmul(&gated, &w[ho.wo..][..hd * d], &mut proj, n, hd, d);
            for (a, p) in attn.iter_mut().zip(&proj) {
                *a += p;
            }
            heads.push(HeadCache { q, k, v, probs, out });
        }
        add_row_bias(&mut attn, &w[lo.bo..][..d]);
        for (a, xi) in attn.iter_mut().zip(&x) {
            *a += xi;
        }
        let norm1 = layer_norm(&attn, &w[lo.ln1_gain..][..d], &w[lo.ln1_bias..][..d]);

        let mut hidden_pre = vec![0.0; n * f];
        matmul(&norm1.out, &w[lo.w1..][..d * f], &mut hidden_pre, n, d, f);
        add_row_bias(&mut hidden_pre, &w[lo.b1..][..f]);
        let hidden_act: Vec<f64> = hidden_pre.iter().map(|&v| gelu(v)).collect();
        let mut ffn = vec![0.0; n * d];
        matmul(&hidden_act, &w[lo.w2..][..f * d], &mut ffn, n, f, d);
        add_row_bias(&mut ffn, &w[lo.b2..][..d]);
        for (a, y) in ffn.iter_mut().zip(&norm1.out) {
            *a += y;
        }
        let norm2 = layer_norm(&ffn, &w[lo.ln2_gain..][..d], &w[lo.ln2_bias..][..d]);
        let next = norm2.out.clone();
        layers.push(LayerCache { input: std::mem::replace(&mut x, next), heads, norm1, hidden_pre, hidden_act, norm2 });
    }

    let ch = c.classifier_hidden_dim;
    let k = c.num_classes;
    let cls = &x[..d];
    let mut cls_hidden = vec![0.0; ch];
    matmul(cls, &w[lay.cls_w1..][..d * ch], &mut cls_hidden, 1, d, ch);
    for (z, b) in cls_hidden.iter_mut().zip(&w[lay.cls_b1..][..ch]) {
        *z = (*z + b).tanh();
    }
    let mut logits = vec![0.0; k];
    matmul(&cls_hidden, &w[lay.cls_w2..][..ch * k], &mut logits, 1, ch, k);
    for (z, b) in logits.iter_mut().zip(&w[lay.cls_b2..][..k]) {
        *z += b;
    }
    // log-softmax for a stable loss
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss_terms: Vec<f64> = logits.iter().map(|z| lse - z).collect();
    let mut probs = logits;
    softmax_in_place(&mut probs);

    ForwardCache { n, norm_emb, layers, cls_hidden, probs, loss_terms }
}

/// Reverse pass. Returns the flat parameter gradient and ∂L/∂ξ per head.
fn run_backward(params: &Parameters, example: &Example, gates: Option<&[f64]>, cache: &ForwardCache) -> (Vec<f64>, Vec<f64>) {
    let c = params.config();
    let lay = params.layout();
    let w = params.values();
    let d = c.model_dim;
    let hd = c.head_dim();
    let f = c.ffn_dim;
    let ch = c.classifier_hidden_dim;
    let k = c.num_classes;
    let n = cache.n;
    let scale = 1.0 / (hd as f64).sqrt();

    let mut g = vec![0.0; lay.len];
    let mut gate_grads = vec![0.0; c.total_heads()];

    // classifier
    let mut dlogits = cache.probs.clone();
    dlogits[example.label] -= 1.0;
    matmul_tn_acc(&cache.cls_hidden, &dlogits, &mut g[lay.cls_w2..][..ch * k], 1, ch, k);
    col_sum_acc(&dlogits, &mut g[lay.cls_b2..][..k]);
    let mut dz = vec![0.0; ch];
    matmul_nt_acc(&dlogits, &w[lay.cls_w2..][..ch * k], &mut dz, 1, k, ch);
    for (dzi, zi) in dz.iter_mut().zip(&cache.cls_hidden) {
        *dzi *= 1.0 - zi * zi;
    }
    let top = cache.layers.last().map(|lc| &lc.norm2.out).unwrap_or(&cache.norm_emb.out);
    matmul_tn_acc(&top[..d], &dz, &mut g[lay.cls_w1..][..d * ch], 1, d, ch);
    col_sum_acc(&dz, &mut g[lay.cls_b1..][..ch]);
    let mut dx = vec![0.0; n * d];
    matmul_nt_acc(&dz, &w[lay.cls_w1..][..d * ch], &mut dx[..d], 1, ch, d);

    for (l, (lo, lc)) in lay.layers.iter().zip(&cache.layers).enumerate().rev() {
        // X' = LN2(Y + FFN(Y))
        let (dgain, rest) = g[lo.ln2_gain..].split_at_mut(d);
        let dpre2 = layer_norm_back(&dx, &lc.norm2, &w[lo.ln2_gain..][..d], dgain, &mut rest[lo.ln2_bias - lo.ln2_gain - d..][..d]);
        let mut dy = dpre2.clone();
        matmul_tn_acc(&lc.hidden_act, &dpre2, &mut g[lo.w2..][..f * d], n, f, d);
        col_sum_acc(&dpre2, &mut g[lo.b2..][..d]);
        let mut dhidden = vec![0.0; n * f];
        matmul_nt_acc(&dpre2, &w[lo.w2..][..f * d], &mut dhidden, n, d, f);
        for (dh, &pre) in dhidden.iter_mut().zip(&lc.hidden_pre) {
            *dh *= gelu_deriv(pre);
        }
        matmul_tn_acc(&lc.norm1.out, &dhidden, &mut g[lo.w1..][..d * f], n, d, f);
        col_sum_acc(&dhidden, &mut g[lo.b1..][..f]);
        matmul_nt_acc(&dhidden, &w[lo.w1..][..d * f], &mut dy, n, f, d);

        // Y = LN1(X + attn)
        let (dgain, rest) = g[lo.ln1_gain..].split_at_mut(d);
        let dpre1 = layer_norm_back(&dy, &lc.norm1, &w[lo.ln1_gain..][..d], dgain, &mut rest[lo.ln1_bias - lo.ln1_gain - d..][..d]);
        let mut dx_next = dpre1.clone();
        col_sum_acc(&dpre1, &mut g[lo.bo..][..d]);

        for (h, (ho, hc)) in lo.heads.iter().zip(&lc.heads).enumerate() {
            let gate = gates.map(|gv| gv[l * c.heads_per_layer + h]);
            // d(gated output) = dattn · Wo_hᵀ
            let mut dgated = vec![0.0; n * hd];
            matmul_nt_acc(&dpre1, &w[ho.wo..][..hd * d], &mut dgated, n, d, hd);
            gate_grads[l * c.heads_per_layer + h] = dot(&dgated, &hc.out);
            let (gated, dout): (Vec<f64>, Vec<f64>) = match gate {
                Some(gv) => (hc.out.iter().map(|o| gv * o).collect(), dgated.iter().map(|v| gv * v).collect()),
                None => (hc.out.clone(), dgated),
            };
            matmul_tn_acc(&gated, &dpre1, &mut g[ho.wo..][..hd * d], n, hd, d);

            // out = P V
            let mut dprobs = vec![0.0; n * n];
            matmul_nt_acc(&dout, &hc.v, &mut dprobs, n, hd, n);
            let mut dv = vec![0.0; n * hd];
            matmul_tn_acc(&hc.probs, &dout, &mut dv, n, n, hd);
            // softmax rows, then the 1/√d_h scale
            let mut dscores = vec![0.0; n * n];
            for i in 0..n {
                let p = &hc.probs[i * n..(i + 1) * n];
                let dp = &dprobs[i * n..(i + 1) * n];
                let inner = dot(p, dp);
                for j in 0..n {
                    dscores[i * n + j] = p[j] * (dp[j] - inner) * scale;
                }
            }
            let mut dq = vec![0.0; n * hd];
            matmul(&dscores, &hc.k, &mut dq, n, n, hd);
            let mut dk = vec![0.0; n * hd];
            matmul_tn_acc(&dscores, &hc.q, &mut dk, n, n, hd);

            for (dproj, wo, bo) in [(&dq, ho.wq, ho.bq), (&dk, ho.wk, ho.bk), (&dv, ho.wv, ho.bv)] {
                matmul_tn_acc(&lc.input, dproj, &mut g[wo..][..d * hd], n, d, hd);
                col_sum_acc(dproj, &mut g[bo..][..hd]);
                matmul_nt_acc(dproj, &w[wo..][..d * hd], &mut dx_next, n, hd, d);
            }
        }
        dx = dx_next;
    }

    // embeddings
    let (dgain, rest) = g[lay.emb_ln_gain..].split_at_mut(d);
    let demb = layer_norm_back(&dx, &cache.norm_emb, &w[lay.emb_ln_gain..][..d], dgain, &mut rest[lay.emb_ln_bias - lay.emb_ln_gain - d..][..d]);
    for (i, (&t, s)) in example.tokens.iter().zip(example.segment_ids()).enumerate() {
        let row = &demb[i * d..(i + 1) * d];
        for base in [lay.tok_emb + t as usize * d, lay.pos_emb + i * d, lay.seg_emb + s * d] {
            for (gj, r) in g[base..base + d].iter_mut().zip(row) {
                *gj += r;
            }
        }
    }
    (g, gate_grads)
}

fn checked_gates(params: &Parameters, example: &Example, mask: &SubnetworkMask) -> Result<Vec<f64>> {
    mask.check_shape(params.config())?;
    example.validate(params.config())?;
    Ok(mask.gate_values())
}

fn finite_loss(cache: &ForwardCache, example: &Example) -> Result<f64> {
    let loss = cache.loss_terms[example.label];
    if !loss.is_finite() {
        return Err(Error::Numerical { example: Some(example.id), message: format!("non-finite loss {loss}") });
    }
    Ok(loss)
}

/// Class probabilities with the mask's head gates applied.
pub fn forward(params: &Parameters, example: &Example, mask: &SubnetworkMask) -> Result<Vec<f64>> {
    let gates = checked_gates(params, example, mask)?;
    Ok(run_forward(params, example, Some(&gates)).probs)
}

/// Class probabilities with no gate multiplication at all.
pub fn forward_ungated(params: &Parameters, example: &Example) -> Result<Vec<f64>> {
    example.validate(params.config())?;
    Ok(run_forward(params, example, None).probs)
}

/// Cross-entropy loss at real-valued gates (the continuous relaxation of ξ).
pub fn loss_with_gates(params: &Parameters, example: &Example, gates: &[f64]) -> Result<f64> {
    example.validate(params.config())?;
    if gates.len() != params.config().total_heads() {
        return Err(Error::contract(format!("expected {} gate values, got {}", params.config().total_heads(), gates.len())));
    }
    let cache = run_forward(params, example, Some(gates));
    finite_loss(&cache, example)
}

pub fn loss(params: &Parameters, example: &Example, mask: &SubnetworkMask) -> Result<f64> {
    let gates = checked_gates(params, example, mask)?;
    let cache = run_forward(params, example, Some(&gates));
    finite_loss(&cache, example)
}

/// Cross-entropy loss of the true label and its gradient w.r.t. every parameter.
pub fn loss_and_grad(params: &Parameters, example: &Example, mask: &SubnetworkMask) -> Result<GradVector> {
    let gates = checked_gates(params, example, mask)?;
    let cache = run_forward(params, example, Some(&gates));
    let loss = finite_loss(&cache, example)?;
    let (values, _) = run_backward(params, example, Some(&gates), &cache);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { example: Some(example.id), message: "non-finite gradient".into() });
    }
    Ok(GradVector { values, loss })
}

/// ∂L/∂ξ at the mask's gate values; disabled heads are reported and flagged.
pub fn gate_grad(params: &Parameters, example: &Example, mask: &SubnetworkMask) -> Result<GateGrad> {
    let gates = checked_gates(params, example, mask)?;
    let cache = run_forward(params, example, Some(&gates));
    let loss = finite_loss(&cache, example)?;
    let (_, values) = run_backward(params, example, Some(&gates), &cache);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { example: Some(example.id), message: "non-finite gate gradient".into() });
    }
    Ok(GateGrad {
        layers: mask.layers(),
        heads: mask.heads(),
        values,
        disabled: mask.bits().iter().map(|&b| !b).collect(),
        loss,
    })
}

/// Argmax class; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &Parameters, example: &Example, mask: &SubnetworkMask) -> Result<usize> {
    forward(params, example, mask).map(|p| argmax(&p))
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn evaluate(params: &Parameters, examples: &[Example], mask: &SubnetworkMask) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::contract("evaluate called on an empty dataset"));
    }
    let mut correct = 0usize;
    for e in examples {
        if predict(params, e, mask)? == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LanguageId, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            heads_per_layer: 2,
            model_dim: 8,
            ffn_dim: 10,
            vocab_size: 12,
            max_seq_len: 9,
            num_classes: 3,
            classifier_hidden_dim: 5,
        }
    }

    fn example(seed: u64) -> Example {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = vec![0];
        for _ in 0..3 {
            tokens.push(rng.random_range(2..12));
        }
        tokens.push(1);
        for _ in 0..2 {
            tokens.push(rng.random_range(2..12));
        }
        Example { id: seed, tokens, label: rng.random_range(0..3), language: LanguageId(0), latent_id: seed }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = Parameters::init(&config(), 1).unwrap();
        let m = SubnetworkMask::full_for(p.config());
        for s in 0..100 {
            let probs = forward(&p, &example(s), &m).unwrap();
            assert!(probs.iter().all(|&q| q >= 0.0));
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn all_ones_mask_equals_ungated_bitwise() {
        let p = Parameters::init(&config(), 2).unwrap();
        let m = SubnetworkMask::full_for(p.config());
        for s in 0..20 {
            let e = example(s);
            assert_eq!(forward(&p, &e, &m).unwrap(), forward_ungated(&p, &e).unwrap());
        }
    }

    #[test]
    fn all_zero_mask_ignores_head_parameters() {
        let p = Parameters::init(&config(), 3).unwrap();
        let m = SubnetworkMask::zeros(2, 2);
        let e = example(5);
        let before = forward(&p, &e, &m).unwrap();
        let mut q = p.clone();
        let layout = p.layout().clone();
        for seg in layout.segments.iter().filter(|s| s.head.is_some()) {
            q.values_mut()[seg.range()].iter_mut().for_each(|v| *v += 0.37);
        }
        assert_eq!(before, forward(&q, &e, &m).unwrap());
    }

    #[test]
    fn uniform_output_gives_log_num_classes() {
        let mut p = Parameters::init(&config(), 4).unwrap();
        let layout = p.layout().clone();
        for seg in layout.segments.iter().filter(|s| s.name.starts_with("classifier.out")) {
            p.values_mut()[seg.range()].iter_mut().for_each(|v| *v = 0.0);
        }
        let g = loss_and_grad(&p, &example(1), &SubnetworkMask::full_for(p.config())).unwrap();
        assert!((g.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disabled_head_gradients_are_exactly_zero() {
        let p = Parameters::init(&config(), 5).unwrap();
        let mut m = SubnetworkMask::full_for(p.config());
        m.set(1, 0, false);
        let g = loss_and_grad(&p, &example(9), &m).unwrap();
        for seg in p.layout().segments.iter().filter(|s| s.head == Some((1, 0))) {
            assert!(g.values[seg.range()].iter().all(|&v| v == 0.0), "{}", seg.name);
        }
        let other = p.layout().segments.iter().find(|s| s.head == Some((0, 0))).unwrap();
        assert!(g.values[other.range()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_head_output_has_zero_gate_gradient() {
        // zero value projection and bias -> head output is the zero vector
        let mut p = Parameters::init(&config(), 6).unwrap();
        let ho = p.layout().layers[0].heads[1].clone();
        let d = p.config().model_dim;
        let hd = p.config().head_dim();
        p.values_mut()[ho.wv..ho.wv + d * hd].iter_mut().for_each(|v| *v = 0.0);
        p.values_mut()[ho.bv..ho.bv + hd].iter_mut().for_each(|v| *v = 0.0);
        let gg = gate_grad(&p, &example(2), &SubnetworkMask::full_for(p.config())).unwrap();
        assert_eq!(gg.get(0, 1), 0.0);
        assert_ne!(gg.get(0, 0), 0.0);
    }

    #[test]
    fn disabled_heads_are_flagged() {
        let p = Parameters::init(&config(), 6).unwrap();
        let mut m = SubnetworkMask::full_for(p.config());
        m.set(0, 1, false);
        let gg = gate_grad(&p, &example(2), &m).unwrap();
        assert_eq!(gg.disabled, vec![false, true, false, false]);
    }

    #[test]
    fn evaluate_rejects_empty_and_scores_self_labels() {
        let p = Parameters::init(&config(), 7).unwrap();
        let m = SubnetworkMask::full_for(p.config());
        assert!(matches!(evaluate(&p, &[], &m), Err(Error::Contract(_))));
        let relabeled: Vec<Example> = (0..30)
            .map(|s| {
                let mut e = example(s);
                e.label = predict(&p, &e, &m).unwrap();
                e
            })
            .collect();
        assert_eq!(evaluate(&p, &relabeled, &m).unwrap(), 1.0);
        assert_eq!(evaluate(&p, &relabeled[..1], &m).unwrap(), 1.0);
    }

    #[test]
    fn argmax_ties_prefer_lowest_index() {
        assert_eq!(argmax(&[0.25, 0.5, 0.25 + 0.0, 0.5]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn mask_shape_mismatch_is_contract_violation() {
        let p = Parameters::init(&config(), 1).unwrap();
        assert!(matches!(forward(&p, &example(0), &SubnetworkMask::ones(3, 2)), Err(Error::Contract(_))));
    }
}
