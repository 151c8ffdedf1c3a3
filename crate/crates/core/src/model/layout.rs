//! Stable flat addressing of every trainable parameter.
//!
//! The layout is a pure function of [`ModelConfig`]. Gradient vectors, AdamW
//! moments, SFT update masks and sketch projectors all index into it.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

/// One contiguous block of the flat parameter vector, viewed as a
/// `rows × cols` row-major matrix (vectors have `cols == 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(layer, head)` when the block belongs to a single attention head.
    pub head: Option<(usize, usize)>,
    /// True for the classifier head on top of the encoder.
    pub classifier: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub struct HeadOffsets {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone)]
pub struct LayerOffsets {
    pub heads: Vec<HeadOffsets>,
    pub bo: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub seg_emb: usize,
    pub emb_ln_gain: usize,
    pub emb_ln_bias: usize,
    pub layers: Vec<LayerOffsets>,
    pub cls_w1: usize,
    pub cls_b1: usize,
    pub cls_w2: usize,
    pub cls_b2: usize,
    pub segments: Vec<Segment>,
    pub len: usize,
}

struct Builder {
    segments: Vec<Segment>,
    next: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, head: Option<(usize, usize)>) -> usize {
        let offset = self.next;
        self.segments.push(Segment { name, offset, rows, cols, head, classifier: false });
        self.next += rows * cols;
        offset
    }
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.model_dim;
        let hd = config.head_dim();
        let f = config.ffn_dim;
        let mut b = Builder { segments: Vec::new(), next: 0 };

        let tok_emb = b.push("embed.token".into(), config.vocab_size, d, None);
        let pos_emb = b.push("embed.position".into(), config.max_seq_len, d, None);
        let seg_emb = b.push("embed.segment".into(), 2, d, None);
        let emb_ln_gain = b.push("embed.norm.gain".into(), d, 1, None);
        let emb_ln_bias = b.push("embed.norm.bias".into(), d, 1, None);

        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut heads = Vec::with_capacity(config.heads_per_layer);
            for h in 0..config.heads_per_layer {
                let tag = Some((l, h));
                let p = |s: &str| format!("layer{l}.head{h}.{s}");
                heads.push(HeadOffsets {
                    wq: b.push(p("query.weight"), d, hd, tag),
                    bq: b.push(p("query.bias"), hd, 1, tag),
                    wk: b.push(p("key.weight"), d, hd, tag),
                    bk: b.push(p("key.bias"), hd, 1, tag),
                    wv: b.push(p("value.weight"), d, hd, tag),
                    bv: b.push(p("value.bias"), hd, 1, tag),
                    wo: b.push(p("output.weight"), hd, d, tag),
                });
            }
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerOffsets {
                heads,
                bo: b.push(p("attn_output.bias"), d, 1, None),
                ln1_gain: b.push(p("norm1.gain"), d, 1, None),
                ln1_bias: b.push(p("norm1.bias"), d, 1, None),
                w1: b.push(p("ffn.w1"), d, f, None),
                b1: b.push(p("ffn.b1"), f, 1, None),
                w2: b.push(p("ffn.w2"), f, d, None),
                b2: b.push(p("ffn.b2"), d, 1, None),
                ln2_gain: b.push(p("norm2.gain"), d, 1, None),
                ln2_bias: b.push(p("norm2.bias"), d, 1, None),
            });
        }

        let first_cls = b.segments.len();
        let ch = config.classifier_hidden_dim;
        let cls_w1 = b.push("classifier.hidden.weight".into(), d, ch, None);
        let cls_b1 = b.push("classifier.hidden.bias".into(), ch, 1, None);
        let cls_w2 = b.push("classifier.out.weight".into(), ch, config.num_classes, None);
        let cls_b2 = b.push("classifier.out.bias".into(), config.num_classes, 1, None);
        for s in &mut b.segments[first_cls..] {
            s.classifier = true;
        }

        ParamLayout {
            tok_emb,
            pos_emb,
            seg_emb,
            emb_ln_gain,
            emb_ln_bias,
            layers,
            cls_w1,
            cls_b1,
            cls_w2,
            cls_b2,
            len: b.next,
            segments: b.segments,
        }
    }
}

impl ParamLayout {
    /// Layout with a single `len × 1` segment and no model structure, for
    /// projecting arbitrary vectors.
    pub fn flat(len: usize) -> Self {
        ParamLayout {
            tok_emb: 0,
            pos_emb: 0,
            seg_emb: 0,
            emb_ln_gain: 0,
            emb_ln_bias: 0,
            layers: Vec::new(),
            cls_w1: 0,
            cls_b1: 0,
            cls_w2: 0,
            cls_b2: 0,
            segments: vec![Segment { name: "flat".into(), offset: 0, rows: len, cols: 1, head: None, classifier: false }],
            len,
        }
    }
}
