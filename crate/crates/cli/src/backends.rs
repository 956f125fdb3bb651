//! Backend selection shared by `run` and `serve`.

use serde::Deserialize;
use xfnl_core::backends::CorruptionSpec;
use xfnl_core::pipeline::{EmbeddingSource, GenerationSource};
use xfnl_core::prompting::{PromptMode, TargetKind};

use crate::args::{GenTestArg, ModeArg, TargetArg};
use crate::Failure;

pub const GEN_URL_ENV: &str = "XFNL_GEN_URL";
pub const EMBED_URL_ENV: &str = "XFNL_EMBED_URL";

fn env_url(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

pub fn prompt_mode(mode: ModeArg, target: TargetArg) -> PromptMode {
    PromptMode {
        with_instruction: mode == ModeArg::Instruct,
        target_kind: match target {
            TargetArg::Doc => TargetKind::Documentation,
            TargetArg::Tagwords => TargetKind::TagWords,
        },
    }
}

/// Explicit URL, then a test backend, then the environment.
pub fn generation(
    url: Option<&str>,
    test: Option<GenTestArg>,
    corrupt_rate: f64,
    substitute_rate: f64,
    seed: u64,
) -> Result<GenerationSource, Failure> {
    match (url, test) {
        (Some(_), Some(_)) => Err(Failure::config(
            "choose either a generation URL or a test generator",
        )),
        (Some(u), None) => Ok(GenerationSource::Url(u.to_owned())),
        (None, Some(GenTestArg::Oracle)) => Ok(GenerationSource::Oracle),
        (None, Some(GenTestArg::Corrupt)) => Ok(GenerationSource::Corrupt {
            spec: CorruptionSpec::new(corrupt_rate, substitute_rate)
                .map_err(|e| Failure::config(e.to_string()))?,
            seed,
        }),
        (None, None) => env_url(GEN_URL_ENV)
            .map(GenerationSource::Url)
            .ok_or_else(|| {
                Failure::config(format!(
                    "no generation backend: pass --gen-url, --gen-test or set {GEN_URL_ENV}"
                ))
            }),
    }
}

pub fn embedding(
    url: Option<&str>,
    test: bool,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingSource, Failure> {
    match (url, test) {
        (Some(_), true) => Err(Failure::config(
            "choose either an embedding URL or the test embedder",
        )),
        (Some(u), false) => Ok(EmbeddingSource::Url(u.to_owned())),
        (None, true) => Ok(EmbeddingSource::Test { dim, seed }),
        (None, false) => env_url(EMBED_URL_ENV)
            .map(EmbeddingSource::Url)
            .ok_or_else(|| {
                Failure::config(format!(
                    "no embedding backend: pass --embed-url, --embed-test or set {EMBED_URL_ENV}"
                ))
            }),
    }
}

fn default_dim() -> usize {
    1024
}

/// `[generation]` table of the serve config.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub url: Option<String>,
    pub test: Option<GenTestArg>,
    #[serde(default)]
    pub corrupt_rate: f64,
    #[serde(default)]
    pub substitute_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationSection {
    pub fn resolve(&self) -> Result<GenerationSource, Failure> {
        generation(
            self.url.as_deref(),
            self.test,
            self.corrupt_rate,
            self.substitute_rate,
            self.seed,
        )
    }
}

/// `[embedding]` table of the serve config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub url: Option<String>,
    #[serde(default)]
    pub test: bool,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            url: None,
            test: false,
            dim: default_dim(),
            seed: 0,
        }
    }
}

impl EmbeddingSection {
    pub fn resolve(&self) -> Result<EmbeddingSource, Failure> {
        embedding(self.url.as_deref(), self.test, self.dim, self.seed)
    }
}
