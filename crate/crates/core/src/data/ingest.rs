//! CSV corpora: `text_a[,text_b],label,language[,latent_id]`, UTF-8 with a header row.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Split};
use crate::error::{Error, Result};
use crate::model::{Example, LanguageId, CLS_TOKEN, SEP_TOKEN};

const UNK_TOKEN: u32 = 2;
const FIRST_WORD_TOKEN: u32 = 3;
const UNK_WORD: &str = "[UNK]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Allowed language names; position is the language id.
    pub languages: Vec<String>,
    /// Whether rows carry a `text_b` column.
    pub pair: bool,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub split: Split,
}

pub struct LoadedCsv {
    pub corpus: Corpus,
    /// Word for every token id (index = id), specials included.
    pub vocabulary: Vec<String>,
}

struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, u32>,
    cap: usize,
}

impl Vocab {
    fn new(cap: usize) -> Self {
        let words: Vec<String> = ["[CLS]", "[SEP]", UNK_WORD].iter().map(|s| s.to_string()).collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocab { words, ids, cap }
    }

    fn id(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        if self.words.len() >= self.cap {
            return UNK_TOKEN;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }
}

/// Tokenizes by whitespace against a corpus-local vocabulary capped at
/// `vocab_size`; words beyond the cap map to `[UNK]`.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    if schema.vocab_size <= FIRST_WORD_TOKEN as usize {
        return Err(Error::config("vocab_size too small for the CSV special tokens"));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::from(e),
    })?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = |name: &str| column(name).ok_or_else(|| Error::format(Some(0), format!("missing column {name}")));
    let col_a = required("text_a")?;
    let col_b = if schema.pair { Some(required("text_b")?) } else { None };
    let col_label = required("label")?;
    let col_lang = required("language")?;
    let col_latent = column("latent_id");

    let mut vocab = Vocab::new(schema.vocab_size);
    let mut examples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(Some(row), e.to_string()))?;
        let field = |c: usize| {
            record.get(c).ok_or_else(|| Error::format(Some(row), format!("missing field {}", &headers[c])))
        };
        let label: usize =
            field(col_label)?.trim().parse().map_err(|_| Error::format(Some(row), "label is not an integer"))?;
        if label >= schema.num_classes {
            return Err(Error::format(
                Some(row),
                format!("label {label} outside 0..{}", schema.num_classes),
            ));
        }
        let lang_name = field(col_lang)?.trim();
        let language = schema
            .languages
            .iter()
            .position(|l| l == lang_name)
            .ok_or_else(|| Error::format(Some(row), format!("unknown language id {lang_name}")))?;
        let latent_id = match col_latent {
            Some(c) => {
                let raw = field(c)?.trim();
                if raw.is_empty() {
                    row as u64
                } else {
                    raw.parse().map_err(|_| Error::format(Some(row), "latent_id is not an integer"))?
                }
            }
            None => row as u64,
        };

        let mut tokens = vec![CLS_TOKEN];
        tokens.extend(field(col_a)?.split_whitespace().map(|w| vocab.id(w)));
        if let Some(c) = col_b {
            tokens.push(SEP_TOKEN);
            tokens.extend(field(c)?.split_whitespace().map(|w| vocab.id(w)));
        }
        if tokens.len() > schema.max_seq_len {
            return Err(Error::format(
                Some(row),
                format!("{} tokens exceed max_seq_len {}", tokens.len(), schema.max_seq_len),
            ));
        }
        examples.push(Example {
            id: examples.len() as u64,
            tokens,
            label,
            language: LanguageId(language as u16),
            latent_id,
        });
    }
    let corpus = Corpus::new(schema.split, schema.languages.clone(), examples)?;
    Ok(LoadedCsv { corpus, vocabulary: vocab.words })
}

/// Writes a corpus back out in the format [`load_csv`] reads.
pub fn write_csv(path: &Path, corpus: &Corpus, vocabulary: &[String], pair: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if pair {
        w.write_record(["text_a", "text_b", "label", "language", "latent_id"])?;
    } else {
        w.write_record(["text_a", "label", "language", "latent_id"])?;
    }
    let word = |t: u32| -> Result<&str> {
        vocabulary
            .get(t as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::contract(format!("token {t} has no vocabulary entry")))
    };
    for e in corpus.examples() {
        let body = e.tokens.get(1..).unwrap_or(&[]);
        let split = body.iter().position(|&t| t == SEP_TOKEN).unwrap_or(body.len());
        let text = |ts: &[u32]| -> Result<String> { Ok(ts.iter().map(|&t| word(t)).collect::<Result<Vec<_>>>()?.join(" ")) };
        let a = text(&body[..split])?;
        let label = e.label.to_string();
        let latent = e.latent_id.to_string();
        let lang = corpus.language_name(e.language).to_string();
        if pair {
            let b = text(body.get(split + 1..).unwrap_or(&[]))?;
            w.write_record([a.as_str(), b.as_str(), label.as_str(), lang.as_str(), latent.as_str()])?;
        } else {
            w.write_record([a.as_str(), label.as_str(), lang.as_str(), latent.as_str()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
