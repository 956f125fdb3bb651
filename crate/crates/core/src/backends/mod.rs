//! Generation and embedding backends.
//!
//! Live backends speak a small JSON protocol over HTTP (see [`http`]); the
//! deterministic in-process backends in [`testing`] stand in for them in
//! tests and desk-scale runs.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
pub mod testing;

pub use http::{ConcurrencyLimit, HttpEmbedder, HttpGenerator, RetryPolicy};
pub use testing::{
    make_test_embedder, BagOfWordsEmbedder, CorruptingGenerator, CorruptionSpec, OracleGenerator,
};

/// Output cap applied to generation requests unless configured otherwise.
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend returned empty text")]
    EmptyResponse,
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no oracle target registered for this input")]
    UnknownPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub input_text: String,
    pub max_new_tokens: u32,
}

impl GenerationRequest {
    pub fn new(input_text: impl Into<String>) -> Self {
        GenerationRequest {
            input_text: input_text.into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
        }
    }

    pub fn with_max_new_tokens(mut self, max_new_tokens: u32) -> Self {
        self.max_new_tokens = max_new_tokens;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedOutput {
    pub text: String,
    pub latency_ms: u64,
}

/// A text generator producing tag documentation (or `others`) for a prompt.
pub trait Generator: Send + Sync {
    /// Raw completion text for one request.
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    /// Completion with trimming, latency and empty-output checks applied.
    fn generate(&self, request: &GenerationRequest) -> Result<GeneratedOutput, BackendError> {
        if request.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        let started = Instant::now();
        let raw = self.complete(request)?;
        let text = raw.trim();
        if text.is_empty() {
            return Err(BackendError::EmptyResponse);
        }
        Ok(GeneratedOutput {
            text: text.to_owned(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

/// Free-function form of [`Generator::generate`].
pub fn generate(
    backend: &dyn Generator,
    request: &GenerationRequest,
) -> Result<GeneratedOutput, BackendError> {
    backend.generate(request)
}

/// Dense vector of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::InvalidResponse("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidResponse(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Maps texts to fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    /// Declared dimension, when known before the first call.
    fn dim(&self) -> Option<usize>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

/// Embeds `texts`, checking that one vector of uniform dimension comes back
/// per input.
pub fn embed(
    backend: &dyn Embedder,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidRequest("no texts to embed".into()));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(BackendError::InvalidRequest(
            "cannot embed empty text".into(),
        ));
    }
    let vectors = backend.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(BackendError::InvalidResponse(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let expected = backend.dim().unwrap_or_else(|| vectors[0].dim());
    if let Some(v) = vectors.iter().find(|v| v.dim() != expected) {
        return Err(BackendError::DimensionMismatch {
            expected,
            found: v.dim(),
        });
    }
    Ok(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo(&'static str);

    impl Generator for Echo {
        fn complete(&self, _: &GenerationRequest) -> Result<String, BackendError> {
            Ok(self.0.to_owned())
        }
    }

    #[test]
    fn generate_trims_and_rejects_empty() {
        let req = GenerationRequest::new("q");
        assert_eq!(req.max_new_tokens, 30);
        assert_eq!(generate(&Echo("  others \n"), &req).unwrap().text, "others");
        assert_eq!(
            generate(&Echo(" \t "), &req).unwrap_err(),
            BackendError::EmptyResponse
        );
        assert!(matches!(
            generate(&Echo("x"), &req.with_max_new_tokens(0)),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn embedding_vector_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert_eq!(EmbeddingVector::new(vec![3.0, 4.0]).unwrap().norm(), 5.0);
    }

    struct Ragged;

    impl Embedder for Ragged {
        fn dim(&self) -> Option<usize> {
            None
        }

        fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
            Ok(texts
                .iter()
                .map(|t| EmbeddingVector::new(vec![1.0; t.len()]).unwrap())
                .collect())
        }
    }

    #[test]
    fn embed_checks_dimensions_and_inputs() {
        let texts = vec!["ab".to_owned(), "abc".to_owned()];
        assert_eq!(
            embed(&Ragged, &texts).unwrap_err(),
            BackendError::DimensionMismatch {
                expected: 2,
                found: 3
            }
        );
        assert!(matches!(
            embed(&Ragged, &[]),
            Err(BackendError::InvalidRequest(_))
        ));
        assert!(matches!(
            embed(&Ragged, &[" ".to_owned()]),
            Err(BackendError::InvalidRequest(_))
        ));
    }
}
