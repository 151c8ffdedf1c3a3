use std::fmt;
use std::str::FromStr;

use crate::analysis::ComposeOp;
use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// A (model, mask assignment) combination that influence is computed for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Fully fine-tuned model, no masking.
    Full,
    /// Fully fine-tuned model, each test language under its own mask.
    Subnet,
    /// Fully fine-tuned model under shuffled per-language masks.
    Random(u64),
    /// Fully fine-tuned model, every test language under one language's mask.
    MaskOf(String),
    /// Fully fine-tuned model under the composition of two languages' masks.
    Composed { op: ComposeOp, a: String, b: String },
    /// Sparsely fine-tuned model with the identified masks.
    Sft,
    /// Sparsely fine-tuned model with shuffled masks.
    SftRandom(u64),
}

fn op_name(op: ComposeOp) -> &'static str {
    match op {
        ComposeOp::Union => "union",
        ComposeOp::Intersect => "intersect",
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::Subnet => write!(f, "subnet"),
            Variant::Random(s) => write!(f, "random-{s}"),
            Variant::MaskOf(l) => write!(f, "mask-of-{l}"),
            Variant::Composed { op, a, b } => write!(f, "composed-{}-{a}+{b}", op_name(*op)),
            Variant::Sft => write!(f, "sft"),
            Variant::SftRandom(s) => write!(f, "sft-random-{s}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown variant {s:?}"));
        let seed = |rest: &str| rest.parse::<u64>().map_err(|_| bad());
        Ok(match s {
            "full" => Variant::Full,
            "subnet" => Variant::Subnet,
            "sft" => Variant::Sft,
            _ => {
                if let Some(rest) = s.strip_prefix("sft-random-") {
                    Variant::SftRandom(seed(rest)?)
                } else if let Some(rest) = s.strip_prefix("random-") {
                    Variant::Random(seed(rest)?)
                } else if let Some(rest) = s.strip_prefix("mask-of-") {
                    if rest.is_empty() {
                        return Err(bad());
                    }
                    Variant::MaskOf(rest.to_string())
                } else if let Some(rest) = s.strip_prefix("composed-") {
                    let (op, pair) = rest.split_once('-').ok_or_else(bad)?;
                    let op = match op {
                        "union" => ComposeOp::Union,
                        "intersect" => ComposeOp::Intersect,
                        _ => return Err(bad()),
                    };
                    let (a, b) = pair.split_once('+').ok_or_else(bad)?;
                    if a.is_empty() || b.is_empty() {
                        return Err(bad());
                    }
                    Variant::Composed { op, a: a.to_string(), b: b.to_string() }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl Variant {
    pub fn uses_sft_model(&self) -> bool {
        matches!(self, Variant::Sft | Variant::SftRandom(_))
    }

    /// Whether single-checkpoint rankings are kept for epoch trajectories.
    pub fn keeps_epochs(&self) -> bool {
        matches!(self, Variant::Full | Variant::Sft | Variant::SftRandom(_))
    }
}

impl ExperimentConfig {
    /// Every variant the configuration asks for, baseline first.
    pub fn variants(&self) -> Vec<Variant> {
        let v = &self.variants;
        let mut out = vec![Variant::Full, Variant::Subnet];
        out.extend(v.random_seeds.iter().map(|&s| Variant::Random(s)));
        out.extend(v.suboptimal.iter().map(|l| Variant::MaskOf(l.clone())));
        out.extend(v.composed.iter().map(|c| Variant::Composed { op: c.op, a: c.a.clone(), b: c.b.clone() }));
        if v.sft {
            out.push(Variant::Sft);
        }
        if v.sft_random {
            out.extend(v.random_seeds.iter().map(|&s| Variant::SftRandom(s)));
        }
        out
    }

    /// Rejects variants that name unknown languages or disabled models.
    pub fn check_variant(&self, variant: &Variant) -> Result<()> {
        match variant {
            Variant::MaskOf(l) => self.corpus.language_id(l).map(|_| ()),
            Variant::Composed { a, b, .. } => {
                self.corpus.language_id(a)?;
                self.corpus.language_id(b).map(|_| ())
            }
            Variant::Sft if !self.variants.sft => Err(Error::config("sft variants are disabled in this config")),
            Variant::SftRandom(_) if !self.variants.sft_random => {
                Err(Error::config("sft-random variants are disabled in this config"))
            }
            _ => Ok(()),
        }
    }
}
