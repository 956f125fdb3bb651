//! End-to-end labeling runs: prompt → generate → match → evaluate.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{
    make_test_embedder, BackendError, ConcurrencyLimit, CorruptingGenerator, CorruptionSpec,
    Embedder, GenerationRequest, Generator, HttpEmbedder, HttpGenerator, OracleGenerator,
    RetryPolicy, DEFAULT_MAX_NEW_TOKENS,
};
use crate::corpus::{parse_corpus, Corpus, CorpusError, Split, TagId, Taxonomy};
use crate::jsonl;
use crate::matcher::{match_generated, IndexSource, MatchError, TagIndex};
use crate::metrics::{evaluate, EvalOptions, EvalReport, LabeledPrediction, MetricsError};
use crate::par::{self, Parallelism};
use crate::prompting::{
    plan_prompts, PromptError, PromptGroup, PromptMode, PromptPlan, PromptRenderer, TargetKind,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("building tag index: {0}")]
    Index(#[from] MatchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{failed} of {total} mentions failed, above the {threshold} threshold")]
    FailureThreshold {
        failed: usize,
        total: usize,
        threshold: f64,
    },
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 when too many
    /// mentions failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Corpus(_)
            | PipelineError::Prompt(_)
            | PipelineError::Io { .. } => 2,
            PipelineError::FailureThreshold { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerationSource {
    Url(String),
    Oracle,
    Corrupt { spec: CorruptionSpec, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Url(String),
    Test { dim: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    pub taxonomy: PathBuf,
    pub instruction_file: Option<PathBuf>,
    pub mode: PromptMode,
    pub generation: GenerationSource,
    pub embedding: EmbeddingSource,
    /// Line-delimited `{"tag", "vector"}` rows used instead of embedding
    /// the taxonomy. Queries still go through `embedding`.
    pub precomputed_embeddings: Option<PathBuf>,
    pub k: usize,
    pub max_new_tokens: u32,
    pub eval: EvalOptions,
    pub report_out: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    /// Receives `prompts.jsonl`, `predictions.jsonl`, `failures.jsonl` and
    /// `index.json`.
    pub artifacts_dir: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub resume: bool,
    pub concurrency: usize,
    /// Largest tolerated fraction of failed mentions.
    pub failure_threshold: f64,
    pub retry: RetryPolicy,
}

impl PipelineConfig {
    pub fn new(dataset: impl Into<PathBuf>, taxonomy: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            dataset: dataset.into(),
            taxonomy: taxonomy.into(),
            instruction_file: None,
            mode: PromptMode::default(),
            generation: GenerationSource::Oracle,
            embedding: EmbeddingSource::Test { dim: 1024, seed: 0 },
            precomputed_embeddings: None,
            k: 5,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            eval: EvalOptions::default(),
            report_out: None,
            index_cache: None,
            artifacts_dir: None,
            journal: None,
            resume: false,
            concurrency: 8,
            failure_threshold: 0.05,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, path) in [("dataset", &self.dataset), ("taxonomy", &self.taxonomy)] {
            if !path.is_file() {
                return Err(PipelineError::Config(format!(
                    "{name} file {} does not exist",
                    path.display()
                )));
            }
        }
        for path in [&self.instruction_file, &self.precomputed_embeddings]
            .into_iter()
            .flatten()
        {
            if !path.is_file() {
                return Err(PipelineError::Config(format!(
                    "{} does not exist",
                    path.display()
                )));
            }
        }
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(PipelineError::Config(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if self.concurrency == 0 {
            return Err(PipelineError::Config(
                "concurrency must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return Err(PipelineError::Config(
                "failure threshold must be in [0, 1]".into(),
            ));
        }
        if let EmbeddingSource::Test { dim, .. } = self.embedding {
            if dim < 8 {
                return Err(PipelineError::Config(
                    "test embedder dimension must be >= 8".into(),
                ));
            }
        }
        if self.resume && self.journal.is_none() {
            return Err(PipelineError::Config(
                "--resume requires a journal path".into(),
            ));
        }
        Ok(())
    }

    pub fn index_source(&self) -> IndexSource {
        match self.mode.target_kind {
            TargetKind::Documentation => IndexSource::Documentation,
            TargetKind::TagWords => IndexSource::TagNames,
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus, PipelineError> {
        let dataset = fs::read(&self.dataset).map_err(io_err(&self.dataset))?;
        let taxonomy = fs::read(&self.taxonomy).map_err(io_err(&self.taxonomy))?;
        Ok(parse_corpus(&dataset, &taxonomy)?)
    }

    pub fn renderer(&self) -> Result<PromptRenderer, PipelineError> {
        match &self.instruction_file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                Ok(PromptRenderer::new(self.mode, text)?)
            }
            None => Ok(PromptRenderer::with_default_instruction(self.mode)),
        }
    }

    /// Generation backend. Oracle-based backends answer the prompts in `plan`.
    pub fn generator(&self, plan: &PromptPlan) -> Box<dyn Generator> {
        match &self.generation {
            GenerationSource::Url(url) => Box::new(HttpGenerator::new(
                url,
                self.retry,
                ConcurrencyLimit::new(self.concurrency),
            )),
            GenerationSource::Oracle => Box::new(OracleGenerator::from_instances(plan.instances())),
            GenerationSource::Corrupt { spec, seed } => Box::new(CorruptingGenerator::new(
                OracleGenerator::from_instances(plan.instances()),
                *spec,
                *seed,
            )),
        }
    }

    pub fn embedder(&self) -> Box<dyn Embedder> {
        match &self.embedding {
            EmbeddingSource::Url(url) => Box::new(HttpEmbedder::new(
                url,
                self.retry,
                ConcurrencyLimit::new(self.concurrency),
            )),
            EmbeddingSource::Test { dim, seed } => Box::new(make_test_embedder(*dim, *seed)),
        }
    }

    /// Loads the index from cache or precomputed vectors, or builds it and
    /// writes the cache when one is configured.
    pub fn index(
        &self,
        taxonomy: &Taxonomy,
        embedder: &dyn Embedder,
    ) -> Result<TagIndex, PipelineError> {
        if let Some(cache) = self.index_cache.as_deref().filter(|p| p.is_file()) {
            let bytes = fs::read(cache).map_err(io_err(cache))?;
            let index = TagIndex::from_cache_bytes(&bytes)?;
            index.check_covers(taxonomy)?;
            if let Some(dim) = embedder.dim() {
                if dim != index.dim() {
                    return Err(PipelineError::Config(format!(
                        "index cache {} has dim {}, embedder has {dim}",
                        cache.display(),
                        index.dim()
                    )));
                }
            }
            log::info!("loaded tag index from {}", cache.display());
            return Ok(index);
        }
        let index = match &self.precomputed_embeddings {
            Some(path) => {
                let bytes = fs::read(path).map_err(io_err(path))?;
                TagIndex::from_precomputed(&bytes, taxonomy)?
            }
            None => TagIndex::build(taxonomy, embedder, self.index_source())?,
        };
        if let Some(cache) = &self.index_cache {
            fs::write(cache, index.to_cache_bytes()).map_err(io_err(cache))?;
        }
        Ok(index)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            k: self.k,
            max_new_tokens: self.max_new_tokens,
            parallelism: Parallelism::from_limit(self.concurrency),
            failure_threshold: self.failure_threshold,
            eval: self.eval.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub k: usize,
    pub max_new_tokens: u32,
    pub parallelism: Parallelism,
    pub failure_threshold: f64,
    pub eval: EvalOptions,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            k: 5,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            parallelism: Parallelism::Global,
            failure_threshold: 0.05,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MentionFailure {
    pub sid: String,
    pub mention_index: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    /// Sorted by `(sid, mention_index)`.
    pub predictions: Vec<LabeledPrediction>,
    pub failures: Vec<MentionFailure>,
    pub plan: PromptPlan,
    pub index_fingerprint: u64,
}

#[derive(Debug, Error)]
enum MentionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// Append-only log of completed predictions, one JSON line each.
#[derive(Debug)]
pub struct Journal {
    file: Mutex<File>,
}

impl Journal {
    /// Opens `path` for appending (`resume`) or truncates it, returning the
    /// predictions already recorded.
    pub fn open(
        path: &Path,
        resume: bool,
    ) -> Result<(Self, Vec<LabeledPrediction>), PipelineError> {
        let mut done = Vec::new();
        if resume && path.is_file() {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            for (i, line) in text.lines().enumerate() {
                match serde_json::from_str::<LabeledPrediction>(line) {
                    Ok(p) => done.push(p),
                    Err(e) if line.trim().is_empty() => log::debug!("journal line {}: {e}", i + 1),
                    Err(e) => log::warn!("journal line {} ignored: {e}", i + 1),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(path)
            .map_err(io_err(path))?;
        Ok((
            Journal {
                file: Mutex::new(file),
            },
            done,
        ))
    }

    pub fn record(&self, preds: &[LabeledPrediction]) -> std::io::Result<()> {
        let lines: String = jsonl::to_string(preds);
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(lines.as_bytes())?;
        file.flush()
    }
}

/// Backends and index shared by every worker of a run.
#[derive(Clone, Copy)]
pub struct Stages<'a> {
    pub generator: &'a dyn Generator,
    pub embedder: &'a dyn Embedder,
    pub index: &'a TagIndex,
}

fn process_group(
    group: &PromptGroup,
    golds: &HashMap<(&str, usize), &TagId>,
    generator: &dyn Generator,
    embedder: &dyn Embedder,
    index: &TagIndex,
    settings: &RunSettings,
) -> Result<Vec<LabeledPrediction>, MentionError> {
    let request = GenerationRequest::new(group.input_text.clone())
        .with_max_new_tokens(settings.max_new_tokens);
    let generated = generator.generate(&request)?;
    let prediction = match_generated(index, &generated, embedder, settings.k)?;
    Ok(group
        .members
        .iter()
        .map(|m| LabeledPrediction {
            sid: m.sid.clone(),
            mention_index: m.mention_index,
            gold: golds[&(m.sid.as_str(), m.mention_index)].clone(),
            prediction: prediction.clone(),
        })
        .collect())
}

/// Runs every test-split prompt group through generation and matching.
///
/// Groups whose members all appear in `completed` are skipped and those
/// predictions reused. Per-mention backend failures are collected; the run
/// fails when their share exceeds the configured threshold.
pub fn execute(
    corpus: &Corpus,
    plan: PromptPlan,
    stages: Stages<'_>,
    settings: &RunSettings,
    journal: Option<&Journal>,
    completed: Vec<LabeledPrediction>,
) -> Result<RunOutcome, PipelineError> {
    let Stages {
        generator,
        embedder,
        index,
    } = stages;
    let golds: HashMap<(&str, usize), &TagId> = corpus
        .mentions(Split::Test)
        .map(|(s, i, m)| ((s.sid.as_str(), i), &m.gold_tag))
        .collect();
    let mut predictions: Vec<LabeledPrediction> = completed
        .into_iter()
        .filter(|p| golds.contains_key(&(p.sid.as_str(), p.mention_index)))
        .collect();
    let done: HashSet<(String, usize)> = predictions
        .iter()
        .map(|p| (p.sid.clone(), p.mention_index))
        .collect();
    let pending: Vec<&PromptGroup> = plan
        .groups
        .iter()
        .filter(|g| {
            !g.members
                .iter()
                .all(|m| done.contains(&(m.sid.clone(), m.mention_index)))
        })
        .collect();
    if !done.is_empty() {
        log::info!("resuming: {} mentions already journaled", done.len());
    }

    let journal_errors = Mutex::new(Vec::new());
    let results = par::map(&pending, settings.parallelism, |group| {
        let result = process_group(group, &golds, generator, embedder, index, settings);
        match &result {
            Ok(preds) => {
                if let Some(j) = journal {
                    if let Err(e) = j.record(preds) {
                        journal_errors
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .push(e);
                    }
                }
            }
            Err(e) => log::warn!("{}: {e}", group.members[0].sid),
        }
        result
    });
    if let Some(e) = journal_errors
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .pop()
    {
        log::error!("journal write failed: {e}");
    }

    let mut failures = Vec::new();
    for (group, result) in pending.iter().zip(results) {
        match result {
            Ok(preds) => predictions.extend(preds),
            Err(e) => failures.extend(group.members.iter().map(|m| MentionFailure {
                sid: m.sid.clone(),
                mention_index: m.mention_index,
                error: e.to_string(),
            })),
        }
    }
    let total = plan.mention_count();
    if total > 0 && failures.len() as f64 / total as f64 > settings.failure_threshold {
        return Err(PipelineError::FailureThreshold {
            failed: failures.len(),
            total,
            threshold: settings.failure_threshold,
        });
    }
    if !failures.is_empty() {
        log::warn!(
            "{} of {total} mentions failed and were excluded",
            failures.len()
        );
    }
    predictions.sort_by(|a, b| (&a.sid, a.mention_index).cmp(&(&b.sid, b.mention_index)));
    let mut report = evaluate(&predictions, corpus, &settings.eval)?;
    report.n_failures = failures.len();
    Ok(RunOutcome {
        report,
        predictions,
        failures,
        plan,
        index_fingerprint: index.fingerprint(),
    })
}

#[derive(Serialize)]
struct IndexManifest {
    source: IndexSource,
    dim: usize,
    rows: usize,
    fingerprint: String,
}

/// Loads inputs, builds backends and index, runs and writes artifacts.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let corpus = config.load_corpus()?;
    let renderer = config.renderer()?;
    let plan = plan_prompts(&corpus, Split::Test, &renderer)?;
    if plan.groups.is_empty() {
        return Err(PipelineError::Config(
            "dataset has no test-split mentions".into(),
        ));
    }
    let generator = config.generator(&plan);
    let embedder = config.embedder();
    let index = config.index(corpus.taxonomy(), embedder.as_ref())?;
    let (journal, completed) = match &config.journal {
        Some(path) => {
            let (j, done) = Journal::open(path, config.resume)?;
            (Some(j), done)
        }
        None => (None, Vec::new()),
    };
    let outcome = execute(
        &corpus,
        plan,
        Stages {
            generator: generator.as_ref(),
            embedder: embedder.as_ref(),
            index: &index,
        },
        &config.settings(),
        journal.as_ref(),
        completed,
    )?;

    if let Some(path) = &config.report_out {
        fs::write(path, outcome.report.to_json()).map_err(io_err(path))?;
    }
    if let Some(dir) = &config.artifacts_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|source| PipelineError::Io { path, source })
        };
        write("prompts.jsonl", jsonl::to_string(outcome.plan.instances()))?;
        write("predictions.jsonl", jsonl::to_string(&outcome.predictions))?;
        write("failures.jsonl", jsonl::to_string(&outcome.failures))?;
        let manifest = IndexManifest {
            source: config.index_source(),
            dim: index.dim(),
            rows: index.len(),
            fingerprint: format!("{:016x}", index.fingerprint()),
        };
        write(
            "index.json",
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
    }
    Ok(outcome)
}
