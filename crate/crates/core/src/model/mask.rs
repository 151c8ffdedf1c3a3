use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layout::ParamLayout;
use crate::error::{Error, Result};

/// Binary head gates ξ over `layers × heads`. A 1 keeps the head, a 0 disables it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "MaskFile", try_from = "MaskFile")]
pub struct SubnetworkMask {
    layers: usize,
    heads: usize,
    bits: Vec<bool>,
}

/// JSON file shape: `{"layers": L, "heads": H, "bits": [[0|1, ...], ...]}`,
/// one inner array of `heads` entries per layer.
#[derive(Serialize, Deserialize)]
pub(crate) struct MaskFile {
    layers: usize,
    heads: usize,
    bits: Vec<Vec<u8>>,
}

impl SubnetworkMask {
    pub fn ones(layers: usize, heads: usize) -> Self {
        SubnetworkMask { layers, heads, bits: vec![true; layers * heads] }
    }

    pub fn zeros(layers: usize, heads: usize) -> Self {
        SubnetworkMask { layers, heads, bits: vec![false; layers * heads] }
    }

    pub fn full_for(config: &ModelConfig) -> Self {
        Self::ones(config.num_layers, config.heads_per_layer)
    }

    pub fn from_bits(layers: usize, heads: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != layers * heads {
            return Err(Error::contract(format!(
                "mask has {} bits, expected {layers}×{heads}",
                bits.len()
            )));
        }
        Ok(SubnetworkMask { layers, heads, bits })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits in (layer, head) lexicographic order.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, layer: usize, head: usize) -> bool {
        self.bits[layer * self.heads + head]
    }

    pub fn set(&mut self, layer: usize, head: usize, on: bool) {
        self.bits[layer * self.heads + head] = on;
    }

    pub fn layer_bits(&self, layer: usize) -> &[bool] {
        &self.bits[layer * self.heads..(layer + 1) * self.heads]
    }

    pub fn enabled_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of disabled heads.
    pub fn sparsity(&self) -> usize {
        self.bits.len() - self.enabled_count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn gate_values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        if self.layers != config.num_layers || self.heads != config.heads_per_layer {
            return Err(Error::contract(format!(
                "mask shape {}×{} does not match model {}×{}",
                self.layers, self.heads, config.num_layers, config.heads_per_layer
            )));
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &SubnetworkMask) -> Result<()> {
        if self.layers != other.layers || self.heads != other.heads {
            return Err(Error::contract(format!(
                "mask shapes differ: {}×{} vs {}×{}",
                self.layers, self.heads, other.layers, other.heads
            )));
        }
        Ok(())
    }

    /// Per-coordinate update mask over the flat parameter vector: head
    /// parameters of disabled heads are `false`, everything else `true`.
    pub fn expand(&self, layout: &ParamLayout) -> Vec<bool> {
        let mut out = vec![true; layout.len];
        for seg in &layout.segments {
            if let Some((l, h)) = seg.head {
                if !self.get(l, h) {
                    out[seg.range()].iter_mut().for_each(|v| *v = false);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mask serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(s)?;
        Self::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Content hash used to key sketch stores.
    pub fn hash(&self) -> String {
        crate::hashing::sha256_hex(self.to_json().as_bytes())
    }
}

impl From<SubnetworkMask> for MaskFile {
    fn from(m: SubnetworkMask) -> Self {
        MaskFile {
            layers: m.layers,
            heads: m.heads,
            bits: m.bits.chunks(m.heads.max(1)).map(|r| r.iter().map(|&b| b as u8).collect()).collect(),
        }
    }
}

impl TryFrom<MaskFile> for SubnetworkMask {
    type Error = Error;

    fn try_from(file: MaskFile) -> Result<Self> {
        if file.bits.len() != file.layers {
            return Err(Error::format(None, format!("mask has {} rows, expected {}", file.bits.len(), file.layers)));
        }
        let mut bits = Vec::with_capacity(file.layers * file.heads);
        for (l, row) in file.bits.iter().enumerate() {
            if row.len() != file.heads {
                return Err(Error::format(Some(l), format!("mask row has {} entries, expected {}", row.len(), file.heads)));
            }
            for &b in row {
                match b {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    other => return Err(Error::format(Some(l), format!("mask entry {other} is not 0 or 1"))),
                }
            }
        }
        SubnetworkMask::from_bits(file.layers, file.heads, bits)
    }
}
