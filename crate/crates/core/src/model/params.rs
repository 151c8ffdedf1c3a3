use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::layout::ParamLayout;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STDAPRM1";

/// Flat parameter vector θ together with its configuration and layout.
#[derive(Debug, Clone)]
pub struct Parameters {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl PartialEq for Parameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

impl Parameters {
    /// Deterministic initialization: matrices ~ N(0, 1/fan_in), embeddings
    /// ~ N(0, 0.25), biases zero, norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(config));
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for seg in &layout.segments {
            let block = &mut values[seg.range()];
            if seg.name.ends_with(".gain") {
                block.iter_mut().for_each(|v| *v = 1.0);
            } else if seg.name.starts_with("embed.") && !seg.name.contains("norm") {
                let dist = Normal::new(0.0, 0.5).expect("valid std");
                block.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            } else if seg.cols > 1 {
                let std = (1.0 / seg.rows as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("valid std");
                block.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            }
        }
        Ok(Parameters { config: config.clone(), layout, values })
    }

    pub fn from_flat(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::new(config));
        if values.len() != layout.len {
            return Err(Error::contract(format!(
                "flat parameter length {} does not match layout length {}",
                values.len(),
                layout.len
            )));
        }
        Ok(Parameters { config: config.clone(), layout, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn shared_layout(&self) -> Arc<ParamLayout> {
        Arc::clone(&self.layout)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Little-endian encoding: magic, eight u64 config fields, u64 length, f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(8 + 9 * 8 + self.values.len() * 8);
        out.extend_from_slice(MAGIC);
        for v in [
            c.num_layers,
            c.heads_per_layer,
            c.model_dim,
            c.ffn_dim,
            c.vocab_size,
            c.max_seq_len,
            c.num_classes,
            c.classifier_hidden_dim,
            self.values.len(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format(None, format!("parameter file: {m}"));
        if bytes.len() < 8 + 9 * 8 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let word = |i: usize| {
            let start = 8 + i * 8;
            u64::from_le_bytes(bytes[start..start + 8].try_into().expect("8 bytes")) as usize
        };
        let config = ModelConfig {
            num_layers: word(0),
            heads_per_layer: word(1),
            model_dim: word(2),
            ffn_dim: word(3),
            vocab_size: word(4),
            max_seq_len: word(5),
            num_classes: word(6),
            classifier_hidden_dim: word(7),
        };
        let len = word(8);
        let body = &bytes[8 + 9 * 8..];
        if body.len() != len * 8 {
            return Err(bad("payload length does not match header"));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Parameters::from_flat(&config, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Parameters::from_bytes(&bytes)
    }
}
