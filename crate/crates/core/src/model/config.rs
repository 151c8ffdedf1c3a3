use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the micro encoder classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub heads_per_layer: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_classes: usize,
    pub classifier_hidden_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("heads_per_layer", self.heads_per_layer),
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("classifier_hidden_dim", self.classifier_hidden_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.model_dim % self.heads_per_layer != 0 {
            return Err(Error::config(format!(
                "model_dim {} is not divisible by heads_per_layer {}",
                self.model_dim, self.heads_per_layer
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads_per_layer
    }

    pub fn total_heads(&self) -> usize {
        self.num_layers * self.heads_per_layer
    }

    /// Closed-form trainable parameter count; must agree with the flat layout.
    pub fn param_count(&self) -> usize {
        let d = self.model_dim;
        let hd = self.head_dim();
        let f = self.ffn_dim;
        let embeddings = self.vocab_size * d + self.max_seq_len * d + 2 * d + 2 * d;
        let per_head = 3 * (d * hd + hd) + hd * d;
        let per_layer = self.heads_per_layer * per_head + d + 2 * d + d * f + f + f * d + d + 2 * d;
        let classifier = d * self.classifier_hidden_dim
            + self.classifier_hidden_dim
            + self.classifier_hidden_dim * self.num_classes
            + self.num_classes;
        embeddings + self.num_layers * per_layer + classifier
    }

    /// Tiny configuration used by gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            num_layers: 1,
            heads_per_layer: 2,
            model_dim: 8,
            ffn_dim: 12,
            vocab_size: 10,
            max_seq_len: 8,
            num_classes: 2,
            classifier_hidden_dim: 6,
        }
    }
}
