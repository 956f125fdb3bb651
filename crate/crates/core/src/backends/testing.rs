//! Deterministic in-process backends.

use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BackendError, Embedder, EmbeddingVector, GenerationRequest, Generator};
use crate::prompting::PromptInstance;
use crate::text::{seeded_hash, words};

/// Replacement words used by the substitution corruption.
pub const DISTRACTORS: &[&str] = &[
    "declared",
    "noncurrent",
    "current",
    "accrued",
    "deferred",
    "gross",
    "net",
    "financing",
    "operating",
    "preferred",
    "treasury",
    "cumulative",
];

fn truncate_words(text: &str, max_words: u32) -> String {
    text.split_whitespace()
        .take(max_words as usize)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Answers each known prompt with its expected target.
///
/// Output is cut to `max_new_tokens` whitespace-separated words. When two
/// prompts share an input text the first registered target wins.
#[derive(Debug, Clone, Default)]
pub struct OracleGenerator {
    targets: HashMap<String, String>,
}

impl OracleGenerator {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut targets = HashMap::new();
        for (input, target) in pairs {
            targets.entry(input).or_insert(target);
        }
        OracleGenerator { targets }
    }

    pub fn from_instances<'a>(instances: impl IntoIterator<Item = &'a PromptInstance>) -> Self {
        Self::new(
            instances
                .into_iter()
                .map(|p| (p.input_text.clone(), p.expected_target.clone())),
        )
    }

    pub fn target(&self, input: &str) -> Option<&str> {
        self.targets.get(input).map(String::as_str)
    }
}

impl Generator for OracleGenerator {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let target = self
            .target(&request.input_text)
            .ok_or(BackendError::UnknownPrompt)?;
        Ok(truncate_words(target, request.max_new_tokens))
    }
}

/// Independent per-word corruption rates, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CorruptionSpec {
    pub deletion_rate: f64,
    pub substitution_rate: f64,
}

impl CorruptionSpec {
    pub fn new(deletion_rate: f64, substitution_rate: f64) -> Result<Self, BackendError> {
        for (name, rate) in [
            ("deletion", deletion_rate),
            ("substitution", substitution_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(BackendError::InvalidRequest(format!(
                    "{name} rate {rate} outside [0, 1]"
                )));
            }
        }
        Ok(CorruptionSpec {
            deletion_rate,
            substitution_rate,
        })
    }

    /// Deletes `round(deletion_rate * n)` words, then substitutes
    /// `round(substitution_rate * m)` of the `m` survivors, all at positions
    /// drawn from a ChaCha8 stream seeded with `seed`.
    pub fn apply(&self, text: &str, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let deletions = (self.deletion_rate * tokens.len() as f64).round() as usize;
        let mut kept = delete_words(&tokens, deletions, &mut rng);
        let substitutions = (self.substitution_rate * kept.len() as f64).round() as usize;
        substitute_words(&mut kept, substitutions, &mut rng);
        kept.join(" ")
    }
}

/// Removes `count` words at positions sampled without replacement.
pub fn delete_words<'a>(tokens: &[&'a str], count: usize, rng: &mut impl Rng) -> Vec<&'a str> {
    let count = count.min(tokens.len());
    let mut drop = vec![false; tokens.len()];
    for i in index::sample(rng, tokens.len(), count) {
        drop[i] = true;
    }
    tokens
        .iter()
        .zip(drop)
        .filter_map(|(t, d)| (!d).then_some(*t))
        .collect()
}

fn substitute_words(tokens: &mut [&str], count: usize, rng: &mut impl Rng) {
    let count = count.min(tokens.len());
    for i in index::sample(rng, tokens.len(), count) {
        tokens[i] = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
    }
}

/// Oracle output passed through seeded word deletion and substitution.
///
/// Each request draws from its own stream seeded by `(seed, input_text)`, so
/// results do not depend on request order or thread scheduling.
#[derive(Debug, Clone)]
pub struct CorruptingGenerator {
    oracle: OracleGenerator,
    spec: CorruptionSpec,
    seed: u64,
}

impl CorruptingGenerator {
    pub fn new(oracle: OracleGenerator, spec: CorruptionSpec, seed: u64) -> Self {
        CorruptingGenerator { oracle, spec, seed }
    }
}

impl Generator for CorruptingGenerator {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let clean = self.oracle.complete(request)?;
        Ok(self
            .spec
            .apply(&clean, seeded_hash(self.seed, &request.input_text)))
    }
}

/// Bag-of-words embedder: each word hashes (with the seed) to one of `dim`
/// coordinates, counts are summed and the result is L2-normalized. Texts
/// with no words embed to the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct BagOfWordsEmbedder {
    dim: usize,
    seed: u64,
}

/// Builds the deterministic test embedder. `dim` must be at least 8.
pub fn make_test_embedder(dim: usize, seed: u64) -> BagOfWordsEmbedder {
    assert!(
        dim >= 8,
        "test embedder dimension must be at least 8, got {dim}"
    );
    BagOfWordsEmbedder { dim, seed }
}

impl BagOfWordsEmbedder {
    pub fn bucket(&self, word: &str) -> usize {
        (seeded_hash(self.seed, word) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        for w in words(text) {
            values[self.bucket(&w)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(values).expect("finite by construction")
    }
}

impl Embedder for BagOfWordsEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
