//! Blocking client for OpenAI-compatible completion endpoints that echo
//! prompt logprobs.
//!
//! One POST per request with body `{model, prompt, max_tokens: 0, echo: true,
//! logprobs: true}`. The response's token strings must tile the prompt
//! exactly (offsets verified, never repaired); the tokens overlapping the
//! continuation's character range become the scored sequence. A token may
//! straddle the context/continuation boundary by at most the separator
//! (standard BPE attaches the joining space to the following token); its
//! span is clamped to the continuation.
//!
//! Transient failures (transport errors, HTTP 429 and 5xx) retry with
//! jittered exponential backoff; every parameter of the schedule is
//! configurable so tests run fast. Other HTTP statuses and malformed bodies
//! fail immediately.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use crate::Real;

use super::{ScoreBackend, ScoreError, ScoreRequest, ScoredSequence, ScoredToken};

/// Environment variable naming the endpoint base URL.
pub const ENDPOINT_ENV: &str = "PRIMELENS_ENDPOINT";
/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PRIMELENS_API_KEY";

/// Base of the logprobs an endpoint returns; values are converted to natural
/// log at this boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Base2,
    Base10,
}

impl LogBase {
    fn to_natural(self) -> Real {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Base2 => std::f64::consts::LN_2,
            LogBase::Base10 => std::f64::consts::LN_10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub path: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub backoff_factor: f64,
    pub jitter: bool,
    pub max_in_flight: usize,
    /// String joining context and continuation in the prompt.
    pub separator: String,
    pub log_base: LogBase,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            path: "/v1/completions".into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            backoff_factor: 2.0,
            jitter: true,
            max_in_flight: 4,
            separator: " ".into(),
            log_base: LogBase::Natural,
        }
    }

    /// Builds a config entirely from the environment.
    pub fn from_env() -> Result<Self, ScoreError> {
        let base_url = std::env::var(ENDPOINT_ENV).map_err(|_| {
            ScoreError::Config(format!("{ENDPOINT_ENV} is not set and no endpoint configured"))
        })?;
        let mut config = EndpointConfig::new(base_url);
        config.api_key = std::env::var(API_KEY_ENV).ok();
        Ok(config)
    }

    /// Environment variables override the configured URL and credentials.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            self.base_url = url;
        }
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            self.api_key = Some(key);
        }
    }

    fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.path)
    }
}

/// Minimal counting semaphore capping concurrent requests.
struct InFlightCap {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlightCap {
    fn new(permits: usize) -> Self {
        InFlightCap { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        InFlightPermit { cap: self }
    }
}

struct InFlightPermit<'a> {
    cap: &'a InFlightCap,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.cap.permits.lock().unwrap() += 1;
        self.cap.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct CompletionsResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<LogprobsPayload>,
}

#[derive(Deserialize)]
pub(crate) struct LogprobsPayload {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<Real>>,
    pub text_offset: Vec<usize>,
}

/// Scoring backend speaking the completions wire protocol.
pub struct WireBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    cap: InFlightCap,
    retries: AtomicU64,
}

impl WireBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, ScoreError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ScoreError::Config(format!("http client: {e}")))?;
        let cap = InFlightCap::new(config.max_in_flight);
        Ok(WireBackend { config, client, cap, retries: AtomicU64::new(0) })
    }

    /// Total number of retried attempts since construction.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn backoff(&self, attempt: u32) {
        let factor = self.config.backoff_factor.powi(attempt as i32);
        let mut delay = self.config.base_delay.as_secs_f64() * factor;
        if self.config.jitter {
            delay *= rand::rng().random_range(0.5..1.5);
        }
        std::thread::sleep(Duration::from_secs_f64(delay));
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<String, RequestFailure> {
        let mut request = self.client.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| RequestFailure::Transient(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| RequestFailure::Transient(format!("reading body: {e}")))?;
        if status.is_success() {
            Ok(text)
        } else if status.as_u16() == 429 || status.is_server_error() {
            Err(RequestFailure::Transient(format!("HTTP {status}: {}", text.trim())))
        } else {
            Err(RequestFailure::Permanent(format!("HTTP {status}: {}", text.trim())))
        }
    }
}

enum RequestFailure {
    Transient(String),
    Permanent(String),
}

impl ScoreBackend for WireBackend {
    fn backend_id(&self) -> &str {
        "wire"
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        let _permit = self.cap.acquire();
        let prompt = request.prompt(&self.config.separator);
        let body = json!({
            "model": request.model_id,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": true,
        });

        let mut last_error = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                self.backoff(attempt - 1);
                self.retries.fetch_add(1, Ordering::Relaxed);
            }
            match self.post_once(&body) {
                Ok(text) => {
                    let parsed: CompletionsResponse = serde_json::from_str(&text)
                        .map_err(|e| ScoreError::Protocol(format!("response body: {e}")))?;
                    let payload = parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.logprobs)
                        .ok_or_else(|| {
                            ScoreError::Protocol("response has no choices[0].logprobs".into())
                        })?;
                    let seq = sequence_from_payload(
                        &prompt,
                        &request.continuation,
                        &self.config.separator,
                        &payload,
                        self.config.log_base.to_natural(),
                        self.backend_id(),
                    )?;
                    seq.validate(&request.continuation)?;
                    return Ok(seq);
                }
                Err(RequestFailure::Permanent(detail)) => {
                    return Err(ScoreError::Protocol(detail));
                }
                Err(RequestFailure::Transient(detail)) => {
                    last_error = detail;
                }
            }
        }
        Err(ScoreError::Unavailable { attempts: self.config.max_attempts, detail: last_error })
    }
}

/// Converts one echoed-logprobs payload into the continuation's scored
/// sequence. Fails rather than repair: offsets must tile the prompt, every
/// continuation token needs a logprob, and the only boundary straddle
/// allowed is the separator.
pub(crate) fn sequence_from_payload(
    prompt: &str,
    continuation: &str,
    separator: &str,
    payload: &LogprobsPayload,
    log_factor: Real,
    backend_id: &str,
) -> Result<ScoredSequence, ScoreError> {
    let n = payload.tokens.len();
    if payload.token_logprobs.len() != n || payload.text_offset.len() != n {
        return Err(ScoreError::Protocol(format!(
            "parallel logprob arrays disagree in length: {} tokens, {} logprobs, {} offsets",
            n,
            payload.token_logprobs.len(),
            payload.text_offset.len()
        )));
    }
    if n == 0 {
        return Err(ScoreError::Coverage("endpoint returned no tokens".into()));
    }
    let mut cursor = 0usize;
    for (i, (text, off)) in payload.tokens.iter().zip(&payload.text_offset).enumerate() {
        if *off != cursor {
            return Err(ScoreError::Coverage(format!(
                "token {i} ('{text}') starts at {off}, expected {cursor}"
            )));
        }
        cursor += text.len();
    }
    if cursor != prompt.len() {
        return Err(ScoreError::Coverage(format!(
            "token texts cover {cursor} of {} prompt bytes",
            prompt.len()
        )));
    }

    let cont_start = prompt.len() - continuation.len();
    let mut tokens = Vec::new();
    for i in 0..n {
        let off = payload.text_offset[i];
        let end = off + payload.tokens[i].len();
        if end <= cont_start {
            continue;
        }
        if tokens.is_empty() && off + separator.len() < cont_start {
            return Err(ScoreError::Coverage(format!(
                "token {i} ('{}') starts {} bytes before the continuation",
                payload.tokens[i],
                cont_start - off
            )));
        }
        let logprob = payload.token_logprobs[i].ok_or_else(|| {
            ScoreError::Protocol(format!(
                "no logprob for continuation token {i} ('{}')",
                payload.tokens[i]
            ))
        })? * log_factor;
        tokens.push(ScoredToken {
            text: payload.tokens[i].clone(),
            logprob,
            span: (off.max(cont_start) - cont_start, end - cont_start),
        });
    }
    if tokens.is_empty() {
        return Err(ScoreError::Coverage("no tokens overlap the continuation".into()));
    }
    Ok(ScoredSequence::from_tokens(backend_id, tokens))
}
