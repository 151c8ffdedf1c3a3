use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusConfig, Split, TaskKind};
use crate::error::Result;
use crate::model::{Example, LanguageId, CLS_TOKEN, SEP_TOKEN};

/// Longest rendered sequence any task produces (`[CLS] a [SEP] b`).
pub const MAX_RENDERED_LEN: usize = 12;

const GROUPS: usize = 4;
const PERMUTATION_STREAM: u64 = 0;
const PARALLEL_STREAM: u64 = 1;
const LANGUAGE_STREAM_BASE: u64 = 16;

pub struct GeneratedCorpus {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

struct Latent {
    a: Vec<usize>,
    b: Vec<usize>,
    label: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Token id of every (language, latent symbol). Language ℓ shares the first
/// `round(overlap·A)` symbols of a seeded permutation with the base language.
pub fn symbol_table(config: &CorpusConfig) -> Vec<Vec<u32>> {
    let a = config.alphabet_size;
    let mut order: Vec<usize> = (0..a).collect();
    order.shuffle(&mut stream(config.seed, PERMUTATION_STREAM));
    let base = config.languages[0].offset;
    config
        .languages
        .iter()
        .map(|lang| {
            let shared = (lang.overlap * a as f64).round() as usize;
            let mut table: Vec<u32> = (0..a).map(|s| lang.offset + s as u32).collect();
            for &s in &order[..shared] {
                table[s] = base + s as u32;
            }
            table
        })
        .collect()
}

fn group_symbols(alphabet: usize, group: usize) -> std::ops::Range<usize> {
    let size = alphabet / GROUPS;
    group * size..(group + 1) * size
}

fn sample_from(rng: &mut ChaCha8Rng, range: std::ops::Range<usize>, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(range.clone())).collect()
}

fn latent(task: TaskKind, alphabet: usize, label: usize, rng: &mut ChaCha8Rng) -> Latent {
    match task {
        TaskKind::PairParaphrase => {
            // topic-consistent restatement vs. a distractor from another topic
            let topic = rng.random_range(0..GROUPS);
            let len_a = rng.random_range(3..=5);
            let a = sample_from(rng, group_symbols(alphabet, topic), len_a);
            let b = if label == 1 {
                let mut b = a.clone();
                b.shuffle(rng);
                if rng.random_bool(0.5) {
                    let i = rng.random_range(0..b.len());
                    b[i] = rng.random_range(group_symbols(alphabet, topic));
                }
                b
            } else {
                let other = (topic + rng.random_range(1..GROUPS)) % GROUPS;
                let len_b = rng.random_range(3..=5);
                sample_from(rng, group_symbols(alphabet, other), len_b)
            };
            Latent { a, b, label }
        }
        TaskKind::PairInferenceBinary => {
            // hypothesis entailed iff all its symbols occur in the premise
            let mut pool: Vec<usize> = (0..alphabet).collect();
            pool.shuffle(rng);
            let len_a = rng.random_range(4..=5);
            let a = pool[..len_a].to_vec();
            let len_b = rng.random_range(2..=3);
            let mut b: Vec<usize> = a[..if label == 1 { len_b } else { len_b - 1 }].to_vec();
            if label == 0 {
                b.push(pool[rng.random_range(len_a..alphabet)]);
            }
            b.shuffle(rng);
            let mut a = a;
            a.shuffle(rng);
            Latent { a, b, label }
        }
        TaskKind::SingleSentimentBinary => {
            // group 0 carries positive polarity, group 1 negative, the rest is neutral
            let len = rng.random_range(5..=8);
            let major = rng.random_range(1..=3);
            let minor = rng.random_range(0..major);
            let (pos, neg) = if label == 1 { (major, minor) } else { (minor, major) };
            let mut a = sample_from(rng, group_symbols(alphabet, 0), pos);
            a.extend(sample_from(rng, group_symbols(alphabet, 1), neg));
            a.extend(sample_from(rng, group_symbols(alphabet, 2).start..alphabet, len - pos - neg));
            a.shuffle(rng);
            Latent { a, b: Vec::new(), label }
        }
    }
}

/// Balanced latent items: labels alternate, then the order is shuffled.
fn latent_items(task: TaskKind, alphabet: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Latent> {
    let mut items: Vec<Latent> = (0..count).map(|i| latent(task, alphabet, i % 2, rng)).collect();
    items.shuffle(rng);
    items
}

fn render(task: TaskKind, table: &[u32], item: &Latent) -> Vec<u32> {
    let mut tokens = Vec::with_capacity(2 + item.a.len() + item.b.len());
    tokens.push(CLS_TOKEN);
    tokens.extend(item.a.iter().map(|&s| table[s]));
    if task.is_pair() {
        tokens.push(SEP_TOKEN);
        tokens.extend(item.b.iter().map(|&s| table[s]));
    }
    tokens
}

/// Deterministic train/dev/test corpora for the configured task and languages.
///
/// Dev items are generated in addition to the train items
/// (`round(dev_fraction · train_per_language)` per language), so the train
/// split keeps exactly `train_per_language` examples per language.
pub fn generate(config: &CorpusConfig) -> Result<GeneratedCorpus> {
    config.validate()?;
    let tables = symbol_table(config);
    let names = config.language_names();
    let sizes = [
        (Split::Train, config.train_per_language),
        (Split::Dev, config.dev_per_language()),
        (Split::Test, config.test_per_language),
    ];

    let mut next_latent = 0u64;
    let mut per_split: Vec<Vec<Example>> = vec![Vec::new(), Vec::new(), Vec::new()];
    if config.parallel {
        let mut rng = stream(config.seed, PARALLEL_STREAM);
        for (slot, &(_, count)) in sizes.iter().enumerate() {
            let items = latent_items(config.task, config.alphabet_size, count, &mut rng);
            let first = next_latent;
            next_latent += count as u64;
            for (l, table) in tables.iter().enumerate() {
                for (i, item) in items.iter().enumerate() {
                    let out = &mut per_split[slot];
                    out.push(Example {
                        id: out.len() as u64,
                        tokens: render(config.task, table, item),
                        label: item.label,
                        language: LanguageId(l as u16),
                        latent_id: first + i as u64,
                    });
                }
            }
        }
    } else {
        for (l, table) in tables.iter().enumerate() {
            let mut rng = stream(config.seed, LANGUAGE_STREAM_BASE + l as u64);
            for (slot, &(_, count)) in sizes.iter().enumerate() {
                let items = latent_items(config.task, config.alphabet_size, count, &mut rng);
                for item in &items {
                    let out = &mut per_split[slot];
                    out.push(Example {
                        id: out.len() as u64,
                        tokens: render(config.task, table, item),
                        label: item.label,
                        language: LanguageId(l as u16),
                        latent_id: next_latent,
                    });
                    next_latent += 1;
                }
            }
        }
    }

    let mut it = per_split.into_iter();
    let mut next = |split| Corpus::new(split, names.clone(), it.next().expect("three splits"));
    Ok(GeneratedCorpus { train: next(Split::Train)?, dev: next(Split::Dev)?, test: next(Split::Test)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::small_config;
    use std::collections::{BTreeMap, HashSet};

    #[test]
    fn train_size_is_languages_times_per_language() {
        let mut c = small_config(TaskKind::PairParaphrase, true);
        c.train_per_language = 2000;
        let g = generate(&c).unwrap();
        assert_eq!(g.train.len(), 10_000);
        assert_eq!(g.dev.len(), 5 * 200);
    }

    #[test]
    fn parallel_latents_render_once_per_language_with_same_label() {
        let g = generate(&small_config(TaskKind::PairParaphrase, true)).unwrap();
        let mut seen: BTreeMap<u64, Vec<(LanguageId, usize)>> = BTreeMap::new();
        for e in g.train.examples() {
            seen.entry(e.latent_id).or_default().push((e.language, e.label));
        }
        for renderings in seen.values() {
            assert_eq!(renderings.len(), 5);
            let langs: HashSet<_> = renderings.iter().map(|r| r.0).collect();
            assert_eq!(langs.len(), 5);
            assert!(renderings.iter().all(|r| r.1 == renderings[0].1));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for task in [TaskKind::PairParaphrase, TaskKind::PairInferenceBinary, TaskKind::SingleSentimentBinary] {
            let c = small_config(task, false);
            let a = generate(&c).unwrap();
            let b = generate(&c).unwrap();
            assert_eq!(a.train.to_jsonl(), b.train.to_jsonl());
            assert_eq!(a.test.to_jsonl(), b.test.to_jsonl());
        }
    }

    #[test]
    fn labels_are_balanced_per_language() {
        for (task, parallel) in [(TaskKind::PairInferenceBinary, true), (TaskKind::SingleSentimentBinary, false)] {
            let mut c = small_config(task, parallel);
            c.train_per_language = 37;
            let g = generate(&c).unwrap();
            for corpus in [&g.train, &g.dev, &g.test] {
                for l in corpus.language_ids() {
                    let ones = corpus.language_index(l).iter().filter(|&&i| corpus.examples()[i].label == 1).count();
                    let n = corpus.language_index(l).len();
                    assert!((2 * ones as i64 - n as i64).abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn measured_overlap_matches_configuration() {
        let c = small_config(TaskKind::PairParaphrase, true);
        let tables = symbol_table(&c);
        let base: HashSet<u32> = tables[0].iter().copied().collect();
        for (lang, table) in c.languages.iter().zip(&tables) {
            let shared = table.iter().filter(|t| base.contains(t)).count();
            let measured = shared as f64 / c.alphabet_size as f64;
            assert!((measured - lang.overlap).abs() <= 1.0 / c.alphabet_size as f64 + 1e-12);
        }
    }

    #[test]
    fn parallel_multisets_match_across_languages() {
        let g = generate(&small_config(TaskKind::PairInferenceBinary, true)).unwrap();
        let multiset = |l: u16| {
            let mut v: Vec<(u64, usize)> = g
                .train
                .language_index(LanguageId(l))
                .iter()
                .map(|&i| (g.train.examples()[i].latent_id, g.train.examples()[i].label))
                .collect();
            v.sort();
            v
        };
        for l in 1..5 {
            assert_eq!(multiset(0), multiset(l));
        }
    }

    #[test]
    fn rendered_tokens_fit() {
        let c = small_config(TaskKind::PairParaphrase, false);
        let g = generate(&c).unwrap();
        for e in g.train.examples() {
            assert!(e.tokens.len() <= MAX_RENDERED_LEN);
            assert!(e.tokens.iter().all(|&t| (t as usize) < c.vocab_size));
        }
    }

    #[test]
    fn vocab_overflow_is_config_error() {
        let mut c = small_config(TaskKind::PairParaphrase, true);
        c.vocab_size = 60;
        assert!(matches!(generate(&c), Err(crate::Error::Config(_))));
    }
}
