//! Synthetic multilingual corpora and external corpus ingestion.
//!
//! Every language renders a shared latent alphabet through its own symbol
//! mapping. A configurable fraction of each language's symbols reuse the
//! base language's tokens, which makes vocabulary overlap the single,
//! controllable knob for how similar two languages are.

mod ingest;
mod synth;

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ingest::{load_csv, write_csv, CsvSchema, LoadedCsv};
pub use synth::{generate, symbol_table, GeneratedCorpus, MAX_RENDERED_LEN};

use crate::error::{Error, Result};
use crate::model::{Example, LanguageId, NUM_SPECIAL_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Sentence pairs; positive when the second segment restates the first.
    PairParaphrase,
    /// Premise/hypothesis pairs collapsed to entailment vs. not.
    PairInferenceBinary,
    /// Single review-like segment with binary polarity.
    SingleSentimentBinary,
}

impl TaskKind {
    pub fn is_pair(self) -> bool {
        !matches!(self, TaskKind::SingleSentimentBinary)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub name: String,
    /// First token id of this language's private symbol range.
    pub offset: u32,
    /// Fraction of latent symbols rendered with the base language's tokens.
    pub overlap: f64,
}

impl LanguageSpec {
    /// Consecutive private ranges right after the special tokens; the first
    /// language is the base and always has overlap 1.
    pub fn standard(names: &[&str], alphabet_size: usize, overlaps: &[f64]) -> Vec<LanguageSpec> {
        names
            .iter()
            .enumerate()
            .map(|(i, name)| LanguageSpec {
                name: (*name).to_string(),
                offset: NUM_SPECIAL_TOKENS + (i * alphabet_size) as u32,
                overlap: if i == 0 { 1.0 } else { overlaps.get(i).copied().unwrap_or(0.0) },
            })
            .collect()
    }
}

fn default_dev_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub task: TaskKind,
    pub languages: Vec<LanguageSpec>,
    pub alphabet_size: usize,
    pub train_per_language: usize,
    pub test_per_language: usize,
    /// Dev examples per language, as a fraction of the train size.
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    pub parallel: bool,
    pub seed: u64,
    /// Size of the model vocabulary the corpus must fit in.
    pub vocab_size: usize,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::config("corpus needs at least one language"));
        }
        if self.parallel && !self.task.is_pair() {
            return Err(Error::config("parallel corpora are only defined for pair tasks"));
        }
        if self.alphabet_size < 8 || self.alphabet_size % 4 != 0 {
            return Err(Error::config("alphabet_size must be a multiple of 4 and at least 8"));
        }
        if self.train_per_language == 0 || self.test_per_language == 0 {
            return Err(Error::config("train and test sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::config("dev_fraction must lie in [0, 1)"));
        }
        let mut names = std::collections::HashSet::new();
        for (i, l) in self.languages.iter().enumerate() {
            if !names.insert(l.name.as_str()) {
                return Err(Error::config(format!("duplicate language {}", l.name)));
            }
            if !(0.0..=1.0).contains(&l.overlap) {
                return Err(Error::config(format!("overlap of {} must lie in [0, 1]", l.name)));
            }
            if i == 0 && l.overlap != 1.0 {
                return Err(Error::config("the first (base) language must have overlap 1"));
            }
            if l.offset < NUM_SPECIAL_TOKENS {
                return Err(Error::config(format!("{} overlaps the special tokens", l.name)));
            }
            let end = l.offset as usize + self.alphabet_size;
            if end > self.vocab_size {
                return Err(Error::config(format!(
                    "vocab overflow: {} needs ids up to {end} but vocab_size is {}",
                    l.name, self.vocab_size
                )));
            }
        }
        Ok(())
    }

    pub fn dev_per_language(&self) -> usize {
        (self.train_per_language as f64 * self.dev_fraction).round() as usize
    }

    pub fn language_names(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.name.clone()).collect()
    }

    pub fn language_id(&self, name: &str) -> Result<LanguageId> {
        self.languages
            .iter()
            .position(|l| l.name == name)
            .map(|i| LanguageId(i as u16))
            .ok_or_else(|| Error::Lookup(format!("unknown language {name}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// An immutable list of examples with a per-language index.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    split: Split,
    languages: Vec<String>,
    examples: Vec<Example>,
    by_language: BTreeMap<LanguageId, Vec<usize>>,
}

impl Corpus {
    pub fn new(split: Split, languages: Vec<String>, examples: Vec<Example>) -> Result<Self> {
        let mut by_language: BTreeMap<LanguageId, Vec<usize>> =
            (0..languages.len()).map(|i| (LanguageId(i as u16), Vec::new())).collect();
        for (i, e) in examples.iter().enumerate() {
            by_language
                .get_mut(&e.language)
                .ok_or_else(|| Error::Lookup(format!("example {} has unknown language id {}", e.id, e.language)))?
                .push(i);
        }
        Ok(Corpus { split, languages, examples, by_language })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn language_ids(&self) -> impl Iterator<Item = LanguageId> + '_ {
        (0..self.languages.len()).map(|i| LanguageId(i as u16))
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Positions of a language's examples, in corpus order.
    pub fn language_index(&self, language: LanguageId) -> &[usize] {
        self.by_language.get(&language).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn language_name(&self, language: LanguageId) -> &str {
        &self.languages[language.index()]
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.examples {
            serde_json::to_writer(&mut out, e).expect("example serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn content_hash(&self) -> String {
        crate::hashing::sha256_hex(&self.to_jsonl())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&self.to_jsonl()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path, split: Split, languages: Vec<String>) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut examples = Vec::new();
        for (row, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Example =
                serde_json::from_str(&line).map_err(|err| Error::format(Some(row + 1), err.to_string()))?;
            examples.push(e);
        }
        Corpus::new(split, languages, examples)
    }
}

/// Order-preserving filter to one language (Xₗ).
pub fn language_slice(corpus: &Corpus, language: LanguageId) -> Result<Corpus> {
    if language.index() >= corpus.languages.len() {
        return Err(Error::Lookup(format!("language {language} is not in the corpus")));
    }
    let examples = corpus.language_index(language).iter().map(|&i| corpus.examples[i].clone()).collect();
    Corpus::new(corpus.split, corpus.languages.clone(), examples)
}
