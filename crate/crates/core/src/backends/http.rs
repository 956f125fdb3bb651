//! HTTP clients for served generation and embedding models.
//!
//! Generation: `POST {base}/v1/generate` with `{"input", "max_new_tokens"}`,
//! answered by `{"text"}`. Embedding: `POST {base}/v1/embed` with
//! `{"texts": [...]}`, answered by `{"vectors": [[...]], "dim"}`. Any status
//! other than 200 is a backend error.

use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendError, Embedder, EmbeddingVector, GenerationRequest, Generator};

pub const GENERATE_PATH: &str = "/v1/generate";
pub const EMBED_PATH: &str = "/v1/embed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Upper bound on the whole call including backoff sleeps.
    pub deadline: Option<Duration>,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(100),
            deadline: None,
            request_timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    /// Sleep before retry number `attempt + 1`: `base_delay * 2^attempt`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyLimit {
    available: Mutex<usize>,
    freed: Condvar,
}

impl ConcurrencyLimit {
    pub fn new(permits: usize) -> Arc<Self> {
        Arc::new(ConcurrencyLimit {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        })
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self
                .freed
                .wait(available)
                .unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit { limit: self }
    }
}

pub struct Permit<'a> {
    limit: &'a ConcurrencyLimit,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self
            .limit
            .available
            .lock()
            .unwrap_or_else(|e| e.into_inner()) += 1;
        self.limit.freed.notify_one();
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

#[derive(Debug, Clone)]
struct JsonClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
    limit: Arc<ConcurrencyLimit>,
}

impl JsonClient {
    fn new(policy: RetryPolicy, limit: Arc<ConcurrencyLimit>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(policy.request_timeout))
            .build();
        JsonClient {
            agent: config.into(),
            policy,
            limit,
        }
    }

    /// POSTs `body`, retrying transport failures and 429/5xx with
    /// exponential backoff. Every attempt sends the same payload.
    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        url: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let started = Instant::now();
        let attempts = self.policy.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            let outcome = {
                let _permit = self.limit.acquire();
                self.agent.post(url).send_json(body)
            };
            match outcome {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if status == 200 {
                        return response
                            .body_mut()
                            .read_json::<Resp>()
                            .map_err(|e| BackendError::InvalidResponse(e.to_string()));
                    }
                    let text = response.body_mut().read_to_string().unwrap_or_default();
                    let err = BackendError::Status { status, body: text };
                    if !retryable_status(status) {
                        return Err(err);
                    }
                    last = Some(err);
                }
                Err(e) => {
                    last = Some(BackendError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    });
                }
            }
            if attempt + 1 == attempts {
                break;
            }
            let pause = self.policy.backoff(attempt);
            if let Some(deadline) = self.policy.deadline {
                if started.elapsed() + pause >= deadline {
                    log::warn!(
                        "{url}: retry deadline reached after {} attempt(s)",
                        attempt + 1
                    );
                    break;
                }
            }
            log::debug!(
                "{url}: attempt {} failed, retrying in {pause:?}",
                attempt + 1
            );
            thread::sleep(pause);
        }
        Err(match last {
            Some(BackendError::Transport { message, .. }) => {
                BackendError::Transport { attempts, message }
            }
            Some(other) => other,
            None => unreachable!("at least one attempt is made"),
        })
    }
}

fn endpoint(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_owned()
    } else {
        format!("{base}{path}")
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    input: &'a str,
    max_new_tokens: u32,
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    url: String,
    client: JsonClient,
}

impl HttpGenerator {
    pub fn new(base_url: &str, policy: RetryPolicy, limit: Arc<ConcurrencyLimit>) -> Self {
        HttpGenerator {
            url: endpoint(base_url, GENERATE_PATH),
            client: JsonClient::new(policy, limit),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Generator for HttpGenerator {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let reply: GenerateReply = self.client.post(
            &self.url,
            &GenerateBody {
                input: &request.input_text,
                max_new_tokens: request.max_new_tokens,
            },
        )?;
        Ok(reply.text)
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Embedding client. Inputs are sent in batches of `batch_size`; the
/// dimension declared by the first reply is enforced on every later one.
#[derive(Debug)]
pub struct HttpEmbedder {
    url: String,
    client: JsonClient,
    batch_size: usize,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, policy: RetryPolicy, limit: Arc<ConcurrencyLimit>) -> Self {
        HttpEmbedder {
            url: endpoint(base_url, EMBED_PATH),
            client: JsonClient::new(policy, limit),
            batch_size: 64,
            dim: OnceLock::new(),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let reply: EmbedReply = self.client.post(&self.url, &EmbedBody { texts: chunk })?;
            let expected = *self.dim.get_or_init(|| reply.dim);
            if reply.dim != expected {
                return Err(BackendError::DimensionMismatch {
                    expected,
                    found: reply.dim,
                });
            }
            if reply.vectors.len() != chunk.len() {
                return Err(BackendError::InvalidResponse(format!(
                    "expected {} vectors, got {}",
                    chunk.len(),
                    reply.vectors.len()
                )));
            }
            for values in reply.vectors {
                if values.len() != expected {
                    return Err(BackendError::DimensionMismatch {
                        expected,
                        found: values.len(),
                    });
                }
                out.push(EmbeddingVector::new(values)?);
            }
        }
        Ok(out)
    }
}
