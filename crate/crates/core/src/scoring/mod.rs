//! Log-probability scoring behind one backend contract.
//!
//! Three interchangeable backends produce per-token natural-log probabilities
//! for (context, continuation) pairs: a deterministic interpolated n-gram
//! model trained in-process, a wire client for OpenAI-compatible completion
//! endpoints with echoed logprobs, and a checksummed append-only score cache.
//! Metrics computed from any of them are interchangeable bit-for-bit as long
//! as the underlying scores agree.

mod cache;
mod ngram;
pub mod synthetic;
mod wire;

pub use cache::{CacheOnlyBackend, CachedBackend, ScoreCache};
pub use ngram::{train_ngram, NGramModel, NGramOptions, UnkMode, UNK_TOKEN};
pub use wire::{EndpointConfig, LogBase, WireBackend, ENDPOINT_ENV, API_KEY_ENV};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// Sum-vs-total and span-tiling slack for scored sequences.
pub const SCORE_TOLERANCE: Real = 1e-9;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("continuation must contain at least one token")]
    EmptyContinuation,
    #[error("word '{0}' is not in the model vocabulary")]
    UnknownWord(String),
    #[error("token '{token}' has zero probability under the configured interpolation weights")]
    ZeroProbability { token: String },
    #[error("n-gram training: {0}")]
    InvalidTraining(String),
    #[error("endpoint unavailable after {attempts} attempts: {detail}")]
    Unavailable { attempts: u32, detail: String },
    #[error("protocol error from endpoint: {0}")]
    Protocol(String),
    #[error("continuation coverage error: {0}")]
    Coverage(String),
    #[error("cache row {row} is corrupt: {detail}")]
    CorruptCache { row: usize, detail: String },
    #[error("cached tokens do not match the request: {0}")]
    TokenizationMismatch(String),
    #[error("no cached score for model '{model_id}' continuation '{continuation}'")]
    MissingRow { model_id: String, continuation: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scoring job. The continuation is the measured string; the context is
/// prepended conditioning material and contributes no scored tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model_id: String,
    pub context: String,
    pub continuation: String,
}

impl ScoreRequest {
    pub fn new(
        model_id: impl Into<String>,
        context: impl Into<String>,
        continuation: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        let continuation = continuation.into();
        if continuation.split_whitespace().next().is_none() {
            return Err(ScoreError::EmptyContinuation);
        }
        Ok(ScoreRequest { model_id: model_id.into(), context: context.into(), continuation })
    }

    /// A request with empty context: an unconditioned sentence probability.
    pub fn unconditioned(
        model_id: impl Into<String>,
        continuation: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        ScoreRequest::new(model_id, "", continuation)
    }

    /// Full prompt string as presented to a text-in/text-out backend.
    pub fn prompt(&self, separator: &str) -> String {
        if self.context.is_empty() {
            self.continuation.clone()
        } else {
            format!("{}{}{}", self.context, separator, self.continuation)
        }
    }
}

/// One scored token. `span` is a byte range into the continuation; leading
/// whitespace belongs to the token that follows it, so spans tile the
/// continuation exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub text: String,
    pub logprob: Real,
    pub span: (usize, usize),
}

/// Per-token natural-log probabilities for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub backend_id: String,
    pub tokens: Vec<ScoredToken>,
    pub total_logprob: Real,
}

impl ScoredSequence {
    /// Builds a sequence whose total is the exact sum of its token logprobs.
    pub fn from_tokens(backend_id: impl Into<String>, tokens: Vec<ScoredToken>) -> Self {
        let total_logprob = tokens.iter().map(|t| t.logprob).sum();
        ScoredSequence { backend_id: backend_id.into(), tokens, total_logprob }
    }

    /// Checks every structural invariant against the continuation the
    /// sequence claims to score: finite logprobs, spans that tile the whole
    /// string in order, and a total within [`SCORE_TOLERANCE`] of the sum.
    pub fn validate(&self, continuation: &str) -> Result<(), ScoreError> {
        if self.tokens.is_empty() {
            return Err(ScoreError::Coverage("no tokens".into()));
        }
        let mut cursor = 0usize;
        for tok in &self.tokens {
            if !tok.logprob.is_finite() {
                return Err(ScoreError::Coverage(format!(
                    "token '{}' has non-finite logprob {}",
                    tok.text, tok.logprob
                )));
            }
            let (start, end) = tok.span;
            if start != cursor || end <= start {
                return Err(ScoreError::Coverage(format!(
                    "token '{}' spans [{start},{end}) but the previous token ended at {cursor}",
                    tok.text
                )));
            }
            cursor = end;
        }
        if cursor != continuation.len() {
            return Err(ScoreError::Coverage(format!(
                "tokens cover [0,{cursor}) of a {}-byte continuation",
                continuation.len()
            )));
        }
        let sum: Real = self.tokens.iter().map(|t| t.logprob).sum();
        if (sum - self.total_logprob).abs() > SCORE_TOLERANCE {
            return Err(ScoreError::Coverage(format!(
                "total_logprob {} differs from token sum {sum}",
                self.total_logprob
            )));
        }
        Ok(())
    }
}

/// The scoring contract every backend implements. Implementations must be
/// safe to call concurrently.
pub trait ScoreBackend: Send + Sync {
    /// Stable identity recorded on every sequence this backend produces.
    fn backend_id(&self) -> &str;

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError>;
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for &B {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        (**self).score(request)
    }
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for std::sync::Arc<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        (**self).score(request)
    }
}

/// Whitespace tokenization with byte spans that tile the input: each token's
/// span starts where the previous token's text ended, so inter-token
/// whitespace belongs to the following token and trailing whitespace to the
/// last one.
pub(crate) fn tokenize_spans(text: &str) -> Vec<(String, (usize, usize))> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, b) in text.bytes().enumerate() {
        if b.is_ascii_whitespace() {
            if let Some(s) = start.take() {
                runs.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        runs.push((s, text.len()));
    }
    let n = runs.len();
    runs.iter()
        .enumerate()
        .map(|(j, &(_, word_end))| {
            let span_start = if j == 0 { 0 } else { runs[j - 1].1 };
            let span_end = if j + 1 == n { text.len() } else { word_end };
            (text[span_start..span_end].to_string(), (span_start, span_end))
        })
        .collect()
}
