use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Leading classifier token; its final hidden state feeds the classifier.
pub const CLS_TOKEN: u32 = 0;
/// Separator between the two segments of a pair input.
pub const SEP_TOKEN: u32 = 1;
/// Number of reserved special token ids at the bottom of the vocabulary.
pub const NUM_SPECIAL_TOKENS: u32 = 2;

/// Index of a language within a corpus configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageId(pub u16);

impl LanguageId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for LanguageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One classification instance: `[CLS] a… [SEP] b…` (or `[CLS] a…` for
/// single-segment tasks).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub label: usize,
    pub language: LanguageId,
    /// Shared by all renderings of the same underlying content.
    pub latent_id: u64,
}

impl Example {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::contract(format!("example {} has no tokens", self.id)));
        }
        if self.tokens.len() > config.max_seq_len {
            return Err(Error::contract(format!(
                "example {} has {} tokens, max_seq_len is {}",
                self.id,
                self.tokens.len(),
                config.max_seq_len
            )));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::contract(format!(
                "example {} has token {t} outside vocabulary of {}",
                self.id, config.vocab_size
            )));
        }
        if self.label >= config.num_classes {
            return Err(Error::contract(format!(
                "example {} has label {} but the model has {} classes",
                self.id, self.label, config.num_classes
            )));
        }
        Ok(())
    }

    /// Segment id per position: 0 through the first separator, 1 after it.
    pub fn segment_ids(&self) -> Vec<usize> {
        let mut seg = 0;
        self.tokens
            .iter()
            .map(|&t| {
                let s = seg;
                if t == SEP_TOKEN {
                    seg = 1;
                }
                s
            })
            .collect()
    }
}
