//! Seeded synthetic corpora for tests, benchmarks and smoke runs.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, NumeralMention, Split, Statement, TagId, TagRecord, Taxonomy};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tas", "vu", "po", "del", "shi", "ar", "bek", "no", "ul", "zi", "fen",
    "gor", "hal", "ju", "ket", "mor",
];

const FILLERS: &[&str] = &[
    "During the fiscal year the company reported",
    "As of the balance sheet date we recorded",
    "Management estimated",
    "The board approved",
    "In the prior period the entity disclosed",
];

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Real tags, not counting `others`.
    pub n_tags: usize,
    pub n_statements: usize,
    pub max_mentions: usize,
    /// Fraction of tags that may only appear as test gold.
    pub held_out_fraction: f64,
    pub others_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_tags: 24,
            n_statements: 120,
            max_mentions: 3,
            held_out_fraction: 0.15,
            others_rate: 0.15,
            seed: 1,
        }
    }
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| *SYLLABLES.choose(rng).expect("nonempty"))
        .collect()
}

/// Taxonomy of `n_tags` tags whose documentations use distinct word sets
/// of 6–12 words each.
pub fn taxonomy(n_tags: usize, seed: u64) -> Taxonomy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    while vocab.len() < 400 {
        let w = pseudo_word(&mut rng);
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }
    let mut names = HashSet::new();
    let mut docs = HashSet::new();
    let mut records = Vec::with_capacity(n_tags);
    while records.len() < n_tags {
        let name = format!(
            "{} {} {}",
            vocab[rng.random_range(0..vocab.len())],
            vocab[rng.random_range(0..vocab.len())],
            vocab[rng.random_range(0..vocab.len())]
        );
        let len = rng.random_range(6..=12);
        let mut words: Vec<&String> = vocab.choose_multiple(&mut rng, len).collect();
        words.sort();
        words.shuffle(&mut rng);
        let mut doc = words
            .iter()
            .map(|w| w.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        doc.push('.');
        let doc = capitalize(&doc);
        if name == "others" || !names.insert(name.clone()) || !docs.insert(doc.to_lowercase()) {
            continue;
        }
        records.push(TagRecord {
            tag_id: TagId::new(&name),
            documentation: doc,
        });
    }
    Taxonomy::new(records).expect("generated taxonomy is valid")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Builds a corpus whose train/validation golds avoid a held-out tag pool,
/// so the test split contains zero-shot tags. Numeral surfaces are unique
/// within each statement.
pub fn corpus(spec: &SyntheticSpec) -> Corpus {
    let taxonomy = taxonomy(spec.n_tags, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut real: Vec<TagId> = taxonomy
        .sorted_tags()
        .into_iter()
        .filter(|t| !t.is_others())
        .collect();
    real.shuffle(&mut rng);
    let held = ((spec.n_tags as f64) * spec.held_out_fraction).round() as usize;
    let (held_out, seen) = real.split_at(held.min(real.len().saturating_sub(1)));

    let mut statements = Vec::with_capacity(spec.n_statements);
    for i in 0..spec.n_statements {
        let split = match rng.random_range(0..20) {
            0..=11 => Split::Train,
            12..=14 => Split::Validation,
            _ => Split::Test,
        };
        let mut text = FILLERS.choose(&mut rng).expect("nonempty").to_string();
        let mut mentions = Vec::new();
        let mut surfaces = HashSet::new();
        let n = rng.random_range(1..=spec.max_mentions.max(1));
        for j in 0..n {
            let surface = loop {
                let s = match rng.random_range(0..3) {
                    0 => format!("{}", rng.random_range(1..10_000)),
                    1 => format!("{}.{}", rng.random_range(0..1000), rng.random_range(1..100)),
                    _ => format!(
                        "{},{:03}",
                        rng.random_range(1..100),
                        rng.random_range(0..1000)
                    ),
                };
                if surfaces.insert(s.clone()) {
                    break s;
                }
            };
            let gold = if rng.random_bool(spec.others_rate) {
                TagId::others()
            } else if split == Split::Test && !held_out.is_empty() && rng.random_bool(0.3) {
                held_out.choose(&mut rng).expect("nonempty").clone()
            } else {
                seen.choose(&mut rng).expect("nonempty").clone()
            };
            text.push_str(if j == 0 { " $" } else { " and $" });
            let start = text.chars().count();
            text.push_str(&surface);
            let end = text.chars().count();
            text.push_str(" million");
            mentions.push(NumeralMention {
                surface,
                start,
                end,
                gold_tag: gold,
            });
        }
        text.push('.');
        statements.push(Statement {
            sid: format!("syn-{i:05}"),
            text,
            mentions,
            split,
        });
    }
    Corpus::new(statements, taxonomy).expect("generated corpus is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, zero_shot_tags};

    #[test]
    fn generated_corpus_is_valid_and_round_trips() {
        let c = corpus(&SyntheticSpec::default());
        let again = parse_corpus(
            c.to_dataset_jsonl().as_bytes(),
            c.taxonomy().to_jsonl().as_bytes(),
        )
        .unwrap();
        assert_eq!(again.statements(), c.statements());
        assert_eq!(c.taxonomy().len(), 25);
        assert!(!zero_shot_tags(&c).is_empty());
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(
            corpus(&spec).to_dataset_jsonl(),
            corpus(&spec).to_dataset_jsonl()
        );
    }
}
