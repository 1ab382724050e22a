//! HTTP client for objectives served by a model process.
//!
//! ```text
//! GET  /info      -> {"embed_dim", "prompt_length", "vocab_size", "verbalizer_ids", "task"}
//! POST /evaluate  {"prompt", "beta", "loss": "ce"|"cr", "return_logits"}
//!                 -> {"loss", "n_examples", "logits"?}
//! ```
//!
//! Requests are idempotent, so transport failures and 5xx answers are retried
//! with exponential backoff. A 4xx answer (422 for a dimension mismatch) is a
//! configuration problem and is never retried.

use std::thread;
use std::time::Duration;

use esid::objective::{EvalCounter, LogitBundle, LossKind, Objective};
use esid::{Error, Result};
use serde::{Deserialize, Serialize};

const BACKOFF_FACTOR: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub loss: LossKind,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub embed_dim: usize,
    pub prompt_length: usize,
    pub vocab_size: usize,
    pub verbalizer_ids: Vec<usize>,
    pub task: String,
}

#[derive(Debug, Serialize)]
struct EvaluateRequest<'a> {
    prompt: &'a [f64],
    beta: f64,
    loss: &'static str,
    return_logits: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EvaluateResponse {
    pub loss: f64,
    pub n_examples: usize,
    #[serde(default)]
    pub logits: Option<Vec<Vec<f64>>>,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fatal(Error),
}

pub struct RemoteObjective {
    spec: RemoteSpec,
    agent: ureq::Agent,
    info: ServerInfo,
    counter: EvalCounter,
}

impl std::fmt::Debug for RemoteObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteObjective")
            .field("endpoint", &self.spec.endpoint)
            .field("info", &self.info)
            .finish()
    }
}

impl RemoteObjective {
    /// Fetches `/info` and checks it describes a usable objective.
    pub fn connect(spec: RemoteSpec) -> Result<Self> {
        if spec.timeout_ms == 0 {
            return Err(Error::RemoteConfig("timeout_ms must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(spec.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut client = Self {
            info: ServerInfo {
                embed_dim: 0,
                prompt_length: 0,
                vocab_size: 0,
                verbalizer_ids: Vec::new(),
                task: String::new(),
            },
            spec,
            agent,
            counter: EvalCounter::new(),
        };
        let url = client.url("info");
        let info: ServerInfo = client.with_retry(|agent| classify(agent.get(&url).call()))?;
        if info.embed_dim * info.prompt_length == 0 || info.verbalizer_ids.is_empty() {
            return Err(Error::RemoteConfig(format!("server advertises an empty objective: {info:?}")));
        }
        if let Some(v) = info.verbalizer_ids.iter().find(|&&v| v >= info.vocab_size) {
            return Err(Error::RemoteConfig(format!("verbalizer id {v} outside vocabulary of {}", info.vocab_size)));
        }
        client.info = info;
        Ok(client)
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.spec.endpoint.trim_end_matches('/'))
    }

    fn with_retry<T>(&self, mut call: impl FnMut(&ureq::Agent) -> Attempt<T>) -> Result<T> {
        let attempts = self.spec.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.spec.backoff_ms * BACKOFF_FACTOR.pow(attempt - 1);
                log::warn!("remote call failed ({last}); retry {attempt} in {wait} ms");
                thread::sleep(Duration::from_millis(wait));
            }
            match call(&self.agent) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(Error::Transport { attempts, message: last })
    }

    /// One `/evaluate` round trip; the prompt is sent as given.
    pub fn request(&self, x: &[f64], return_logits: bool) -> Result<EvaluateResponse> {
        let (loss, beta) = match self.spec.loss {
            LossKind::Ce => ("ce", 0.0),
            LossKind::Cr { beta } => ("cr", beta),
        };
        let body = EvaluateRequest {
            prompt: x,
            beta,
            loss,
            return_logits,
        };
        let url = self.url("evaluate");
        let resp: EvaluateResponse = self.with_retry(|agent| classify(agent.post(&url).send_json(&body)))?;
        if !resp.loss.is_finite() {
            return Err(Error::InvalidInput(format!("server returned non-finite loss {}", resp.loss)));
        }
        Ok(resp)
    }
}

fn classify<T: serde::de::DeserializeOwned>(result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Attempt<T> {
    let mut resp = match result {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(e.to_string()),
    };
    let status = resp.status().as_u16();
    if status >= 500 {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Attempt::Retry(format!("HTTP {status}: {text}"));
    }
    if status >= 400 {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Attempt::Fatal(Error::RemoteConfig(format!("HTTP {status}: {text}")));
    }
    match resp.body_mut().read_json::<T>() {
        Ok(v) => Attempt::Done(v),
        Err(e) => Attempt::Retry(format!("malformed response: {e}")),
    }
}

impl Objective for RemoteObjective {
    fn dim(&self) -> usize {
        self.info.embed_dim * self.info.prompt_length
    }

    fn counter(&self) -> &EvalCounter {
        &self.counter
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(self.request(x, false)?.loss)
    }

    /// The wire format carries no labels, so each bundle's `label_id` is the
    /// first verbalizer. The bundles are meant for confidence diagnostics,
    /// which ignore the label.
    fn logit_bundles(&self, x: &[f64]) -> Result<Vec<LogitBundle>> {
        let resp = self.request(x, true)?;
        let logits = resp
            .logits
            .ok_or_else(|| Error::RemoteConfig("server ignored return_logits".into()))?;
        logits
            .into_iter()
            .map(|row| LogitBundle::new(row, self.info.verbalizer_ids.clone(), self.info.verbalizer_ids[0]))
            .collect()
    }
}
