//! HTTP service: single-sentence tagging plus the review workflow.
//!
//! Backends are blocking and run on the blocking thread pool. Annotation
//! writes go through one mutex, so the log file never interleaves.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use xfnl_core::backends::{Embedder, GenerationRequest, Generator, DEFAULT_MAX_NEW_TOKENS};
use xfnl_core::corpus::{parse_corpus, Split, TagId, Taxonomy};
use xfnl_core::jsonl;
use xfnl_core::matcher::{match_generated, TagIndex};
use xfnl_core::prompting::{plan_prompts, PromptPlan, PromptRenderer};
use xfnl_core::review::{
    agreement_report, validate_annotation, AgreementReport, AnnotationRecord, ReviewError,
    ReviewTask, TaskView,
};
use xfnl_core::PipelineConfig;

use crate::args::{ModeArg, ServeArgs, TargetArg};
use crate::backends::{self, EmbeddingSection, GenerationSection};
use crate::review::{read_annotations, read_jsonl};
use crate::Failure;

fn default_k() -> usize {
    5
}

fn default_max_new_tokens() -> u32 {
    DEFAULT_MAX_NEW_TOKENS
}

fn default_concurrency() -> usize {
    8
}

fn default_mode() -> ModeArg {
    ModeArg::Instruct
}

fn default_target() -> TargetArg {
    TargetArg::Doc
}

/// TOML service configuration. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    pub taxonomy: PathBuf,
    /// Needed only by the oracle-based test generators.
    pub dataset: Option<PathBuf>,
    pub instruction_file: Option<PathBuf>,
    #[serde(default = "default_mode")]
    pub mode: ModeArg,
    #[serde(default = "default_target")]
    pub target: TargetArg,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub precomputed_embeddings: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    /// Review tasks from `xfnl review build`.
    pub tasks: Option<PathBuf>,
    /// Append-only annotation log.
    pub annotations: Option<PathBuf>,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
}

impl ServeConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::read(path, e))?;
        let mut config: ServeConfig = toml::from_str(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut config.taxonomy);
        for p in [
            &mut config.dataset,
            &mut config.instruction_file,
            &mut config.precomputed_embeddings,
            &mut config.index_cache,
            &mut config.tasks,
            &mut config.annotations,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        Ok(config)
    }

    fn pipeline_config(&self) -> Result<PipelineConfig, Failure> {
        let mut pc = PipelineConfig::new(
            self.dataset.clone().unwrap_or_default(),
            self.taxonomy.clone(),
        );
        pc.instruction_file = self.instruction_file.clone();
        pc.mode = backends::prompt_mode(self.mode, self.target);
        pc.generation = self.generation.resolve()?;
        pc.embedding = self.embedding.resolve()?;
        pc.precomputed_embeddings = self.precomputed_embeddings.clone();
        pc.index_cache = self.index_cache.clone();
        pc.k = self.k;
        pc.max_new_tokens = self.max_new_tokens;
        pc.concurrency = self.concurrency;
        Ok(pc)
    }
}

/// Generator, embedder and index behind `POST /tag`.
pub struct Tagger {
    pub renderer: PromptRenderer,
    pub generator: Box<dyn Generator>,
    pub embedder: Box<dyn Embedder>,
    pub index: TagIndex,
    pub taxonomy: Taxonomy,
    pub k: usize,
    pub max_new_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagCandidate {
    pub tag: TagId,
    pub documentation: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagResponse {
    pub candidates: Vec<TagCandidate>,
    pub generated: String,
}

impl Tagger {
    pub fn tag(&self, text: &str, numeral: &str) -> Result<TagResponse, ApiError> {
        let input = self.renderer.input_text(text.trim(), numeral.trim());
        let request = GenerationRequest::new(input).with_max_new_tokens(self.max_new_tokens);
        let generated = self
            .generator
            .generate(&request)
            .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()))?;
        let prediction = match_generated(&self.index, &generated, self.embedder.as_ref(), self.k)
            .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()))?;
        Ok(TagResponse {
            candidates: prediction
                .ranked
                .into_iter()
                .map(|s| TagCandidate {
                    documentation: self
                        .taxonomy
                        .documentation(&s.tag)
                        .unwrap_or_default()
                        .to_owned(),
                    tag: s.tag,
                    score: s.score,
                })
                .collect(),
            generated: generated.text,
        })
    }
}

/// Tasks plus every accepted annotation, in arrival order.
pub struct ReviewStore {
    tasks: Vec<ReviewTask>,
    by_id: HashMap<String, ReviewTask>,
    annotations: Vec<AnnotationRecord>,
    log: Option<File>,
}

impl ReviewStore {
    pub fn new(
        tasks: Vec<ReviewTask>,
        annotations: Vec<AnnotationRecord>,
        log_path: Option<&Path>,
    ) -> Result<Self, Failure> {
        let by_id = tasks
            .iter()
            .map(|t| (t.task_id.clone(), t.clone()))
            .collect();
        let log = match log_path {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Failure::other(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        Ok(ReviewStore {
            tasks,
            by_id,
            annotations,
            log,
        })
    }

    fn annotators_of(&self, task_id: &str) -> BTreeSet<&str> {
        self.annotations
            .iter()
            .filter(|a| a.task_id == task_id)
            .map(|a| a.annotator.as_str())
            .collect()
    }

    /// First task the annotator has not labeled that still needs a second
    /// opinion.
    pub fn next_for(&self, annotator: &str) -> Option<NextTask> {
        let done = self
            .annotations
            .iter()
            .filter(|a| a.annotator == annotator)
            .map(|a| a.task_id.as_str())
            .collect::<BTreeSet<_>>();
        let task = self.tasks.iter().find(|t| {
            !done.contains(t.task_id.as_str()) && self.annotators_of(&t.task_id).len() < 2
        })?;
        Some(NextTask {
            task: task.view(),
            progress: Progress {
                completed: done.len(),
                total: self.tasks.len(),
            },
        })
    }

    pub fn record(&mut self, record: AnnotationRecord) -> Result<(), ApiError> {
        validate_annotation(&self.by_id, &record).map_err(|e| match e {
            ReviewError::UnknownTask(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        })?;
        if let Some(log) = &mut self.log {
            log.write_all(jsonl::line(&record).as_bytes())
                .and_then(|_| log.flush())
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        self.annotations.push(record);
        Ok(())
    }

    pub fn report(&self) -> AgreementReport {
        match agreement_report(&self.annotations, &self.tasks) {
            Ok(r) => r,
            Err(_) => AgreementReport::empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTask {
    #[serde(flatten)]
    pub task: TaskView,
    pub progress: Progress,
}

pub struct AppState {
    pub tagger: Tagger,
    pub review: Mutex<ReviewStore>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

#[derive(Debug, Deserialize)]
struct TagRequest {
    text: String,
    numeral: String,
}

async fn tag(
    State(state): State<Arc<AppState>>,
    Json(req): Json<TagRequest>,
) -> Result<Json<TagResponse>, ApiError> {
    if req.text.trim().is_empty() || req.numeral.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "text and numeral must be non-empty",
        ));
    }
    if !req.text.contains(req.numeral.trim()) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("numeral {:?} does not occur in text", req.numeral),
        ));
    }
    let response = tokio::task::spawn_blocking(move || state.tagger.tag(&req.text, &req.numeral))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(
    State(state): State<Arc<AppState>>,
    Query(q): Query<NextQuery>,
) -> Result<Response, ApiError> {
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "annotator is required"))?;
    let store = state.review.lock().unwrap_or_else(|e| e.into_inner());
    Ok(match store.next_for(&annotator) {
        Some(next) => Json(next).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Debug, Deserialize)]
struct AnnotationRequest {
    task_id: String,
    annotator: String,
    chosen: TagId,
    timestamp: Option<u64>,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn post_annotation(
    State(state): State<Arc<AppState>>,
    Json(req): Json<AnnotationRequest>,
) -> Result<(StatusCode, Json<AnnotationRecord>), ApiError> {
    if req.annotator.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "annotator is required",
        ));
    }
    let record = AnnotationRecord {
        task_id: req.task_id,
        annotator: req.annotator,
        chosen: req.chosen,
        timestamp: req.timestamp.unwrap_or_else(now_millis),
    };
    state
        .review
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .record(record.clone())?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn agreement(State(state): State<Arc<AppState>>) -> Json<AgreementReport> {
    Json(
        state
            .review
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .report(),
    )
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/tag", post(tag))
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(post_annotation))
        .route("/reports/agreement", get(agreement))
        .route("/healthz", get(health))
        .with_state(state)
}

fn oracle_plan(config: &ServeConfig, pc: &PipelineConfig) -> Result<PromptPlan, Failure> {
    let dataset = config
        .dataset
        .as_ref()
        .ok_or_else(|| Failure::config("test generators need `dataset` to know their answers"))?;
    let corpus = PipelineConfig {
        dataset: dataset.clone(),
        ..pc.clone()
    }
    .load_corpus()?;
    let renderer = pc.renderer()?;
    let mut plan = PromptPlan::default();
    for split in [Split::Train, Split::Validation, Split::Test] {
        let part =
            plan_prompts(&corpus, split, &renderer).map_err(|e| Failure::config(e.to_string()))?;
        plan.groups.extend(part.groups);
    }
    Ok(plan)
}

/// Loads everything the service needs, failing fast on unreachable backends.
pub fn build_state(config: &ServeConfig) -> Result<AppState, Failure> {
    if config.k == 0 {
        return Err(Failure::config("k must be at least 1"));
    }
    let pc = config.pipeline_config()?;
    let taxonomy_bytes =
        fs::read(&config.taxonomy).map_err(|e| Failure::read(&config.taxonomy, e))?;
    let taxonomy = Taxonomy::parse(&taxonomy_bytes).map_err(|e| Failure::config(e.to_string()))?;
    let renderer = pc.renderer()?;
    let plan = match pc.generation {
        xfnl_core::pipeline::GenerationSource::Url(_) => PromptPlan::default(),
        _ => oracle_plan(config, &pc)?,
    };
    if let Some(dataset) = &config.dataset {
        // a dataset that does not parse against the taxonomy is a config error
        let _ = parse_corpus(
            &fs::read(dataset).map_err(|e| Failure::read(dataset, e))?,
            &taxonomy_bytes,
        )
        .map_err(|e| Failure::config(e.to_string()))?;
    }
    let generator = pc.generator(&plan);
    let embedder = pc.embedder();
    let index = pc.index(&taxonomy, embedder.as_ref())?;
    if let xfnl_core::pipeline::GenerationSource::Url(url) = &pc.generation {
        generator
            .complete(&GenerationRequest::new("ping").with_max_new_tokens(1))
            .map_err(|e| Failure::other(format!("generation backend {url} unavailable: {e}")))?;
    }

    let tasks: Vec<ReviewTask> = match &config.tasks {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let annotations = match &config.annotations {
        Some(p) => read_annotations(p)?,
        None => Vec::new(),
    };
    let review = ReviewStore::new(tasks, annotations, config.annotations.as_deref())?;
    Ok(AppState {
        tagger: Tagger {
            renderer,
            generator,
            embedder,
            index,
            taxonomy,
            k: config.k,
            max_new_tokens: config.max_new_tokens,
        },
        review: Mutex::new(review),
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
    log::info!("shutting down; draining in-flight requests");
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), Failure> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::other(format!("binding {addr}: {e}")))?;
    let local = listener
        .local_addr()
        .map_err(|e| Failure::other(e.to_string()))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| Failure::other(e.to_string()))
}

pub fn serve_blocking(args: &ServeArgs) -> Result<(), Failure> {
    let config = ServeConfig::load(&args.config)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| Failure::config(format!("address {}:{}: {e}", args.host, args.port)))?;
    let state = build_state(&config)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::other(e.to_string()))?;
    runtime.block_on(serve(state, addr))
}
