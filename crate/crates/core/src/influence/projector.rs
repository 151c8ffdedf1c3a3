use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionScheme {
    /// One `d × p` Gaussian matrix with entries N(0, 1/d).
    DenseFull,
    /// Per parameter block `m × n`, `G1 ∇W G2ᵀ` with `G1: √d × m`, `G2: √d × n`,
    /// flattened and summed over blocks.
    FactoredPerMatrix,
    /// No projection; the sketch is the gradient itself.
    Exact,
}

#[derive(Debug, Clone)]
enum Blocks {
    /// Column-major: column `i` (length d) multiplies gradient coordinate `i`.
    Dense(Vec<f64>),
    /// `(G1, G2)` per layout segment, both row-major with `side` rows.
    Factored { side: usize, pairs: Vec<(Vec<f64>, Vec<f64>)> },
    Exact,
}

/// Random projection bound to a parameter layout.
#[derive(Debug, Clone)]
pub struct SketchProjector {
    seed: u64,
    dim: usize,
    scheme: ProjectionScheme,
    layout: Arc<ParamLayout>,
    blocks: Blocks,
}

fn gaussian_fill(rng: &mut ChaCha8Rng, len: usize, variance: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, variance.sqrt()).expect("positive variance");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Builds a deterministic projector. `d` is ignored for [`ProjectionScheme::Exact`],
/// whose sketch dimension is the parameter count.
pub fn build_projector(seed: u64, d: usize, layout: Arc<ParamLayout>, scheme: ProjectionScheme) -> Result<SketchProjector> {
    if d == 0 && scheme != ProjectionScheme::Exact {
        return Err(Error::config("sketch dimension must be at least 1"));
    }
    let (dim, blocks) = match scheme {
        ProjectionScheme::DenseFull => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (d, Blocks::Dense(gaussian_fill(&mut rng, d * layout.len, 1.0 / d as f64)))
        }
        ProjectionScheme::FactoredPerMatrix => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side != d {
                return Err(Error::config(format!("factored projection needs a square sketch dimension, got {d}")));
            }
            let pairs = layout
                .segments
                .iter()
                .enumerate()
                .map(|(i, seg)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    let g1 = gaussian_fill(&mut rng, side * seg.rows, 1.0 / side as f64);
                    let g2 = gaussian_fill(&mut rng, side * seg.cols, 1.0 / side as f64);
                    (g1, g2)
                })
                .collect();
            (d, Blocks::Factored { side, pairs })
        }
        ProjectionScheme::Exact => (layout.len, Blocks::Exact),
    };
    Ok(SketchProjector { seed, dim, scheme, layout, blocks })
}

impl SketchProjector {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scheme(&self) -> ProjectionScheme {
        self.scheme
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// `(G1, G2)` of a layout segment under the factored scheme.
    pub fn factored_block(&self, segment: usize) -> Option<(&[f64], &[f64])> {
        match &self.blocks {
            Blocks::Factored { pairs, .. } => pairs.get(segment).map(|(a, b)| (a.as_slice(), b.as_slice())),
            _ => None,
        }
    }

    /// Dense column for gradient coordinate `i`.
    pub fn dense_column(&self, i: usize) -> Option<&[f64]> {
        match &self.blocks {
            Blocks::Dense(g) => g.get(i * self.dim..(i + 1) * self.dim),
            _ => None,
        }
    }

    /// Projects a flat gradient aligned to the bound layout.
    pub fn project(&self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.layout.len {
            return Err(Error::contract(format!(
                "gradient has {} entries, projector layout has {}",
                grad.len(),
                self.layout.len
            )));
        }
        let d = self.dim;
        match &self.blocks {
            Blocks::Exact => Ok(grad.to_vec()),
            Blocks::Dense(g) => {
                let mut out = vec![0.0; d];
                for (i, &x) in grad.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (o, c) in out.iter_mut().zip(&g[i * d..(i + 1) * d]) {
                        *o += x * c;
                    }
                }
                Ok(out)
            }
            Blocks::Factored { side, pairs } => {
                let s = *side;
                let mut out = vec![0.0; d];
                let mut right = Vec::new();
                for (seg, (g1, g2)) in self.layout.segments.iter().zip(pairs) {
                    let w = &grad[seg.range()];
                    if w.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let (m, n) = (seg.rows, seg.cols);
                    // right = W G2ᵀ  (m × s)
                    right.clear();
                    right.resize(m * s, 0.0);
                    for r in 0..m {
                        let row = &w[r * n..(r + 1) * n];
                        for (k, acc) in right[r * s..(r + 1) * s].iter_mut().enumerate() {
                            *acc = crate::linalg::dot(row, &g2[k * n..(k + 1) * n]);
                        }
                    }
                    // out += G1 right  (s × s)
                    for a in 0..s {
                        let g1_row = &g1[a * m..(a + 1) * m];
                        let dst = &mut out[a * s..(a + 1) * s];
                        for (r, &coef) in g1_row.iter().enumerate() {
                            if coef == 0.0 {
                                continue;
                            }
                            for (o, x) in dst.iter_mut().zip(&right[r * s..(r + 1) * s]) {
                                *o += coef * x;
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}
