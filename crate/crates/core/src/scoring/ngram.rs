//! Deterministic interpolated n-gram oracle.
//!
//! Whitespace-tokenized, case-insensitive, closed-vocabulary. Probabilities
//! interpolate maximum-likelihood estimates of orders 1..=order; at positions
//! where a higher-order context was never observed (or the history is shorter
//! than the context needs), the interpolation weights are renormalized over
//! the levels that are available, and if every available weight is zero the
//! available levels are weighted uniformly. The unigram level is always
//! available, so interpolated probabilities are defined everywhere; they can
//! still be zero (e.g. pure-bigram weights and an unseen word in a seen
//! context), which scoring reports as an error rather than emitting -inf.
//!
//! No begin/end-of-sentence padding: early tokens simply fall back to the
//! lower orders. The vocabulary always reserves [`UNK_TOKEN`]; in
//! [`UnkMode::Map`] unknown words are mapped onto it, which only yields
//! finite scores if the training data itself contained `<unk>` tokens.

use std::collections::{BTreeSet, HashMap};

use crate::num::{lit, Scalar};
use crate::Real;

use super::{tokenize_spans, ScoreBackend, ScoreError, ScoreRequest, ScoredSequence, ScoredToken};

/// Reserved vocabulary entry for out-of-vocabulary words.
pub const UNK_TOKEN: &str = "<unk>";

/// What to do when a scored word is not in the training vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnkMode {
    /// Refuse to score, naming the word.
    Error,
    /// Substitute [`UNK_TOKEN`] for lookups (token text and spans keep the
    /// original surface form).
    Map,
}

#[derive(Debug, Clone)]
pub struct NGramOptions<F: Scalar = Real> {
    /// Highest n-gram order; 1 is a pure unigram model.
    pub order: usize,
    /// Interpolation weights, one per order, non-negative, summing to 1.
    pub weights: Vec<F>,
    /// Maximum number of conditioning tokens; may exceed sentence length so
    /// a continuation's first tokens can condition on the whole context.
    pub context_window: usize,
    pub unk_mode: UnkMode,
}

impl<F: Scalar> Default for NGramOptions<F> {
    fn default() -> Self {
        NGramOptions {
            order: 3,
            weights: vec![lit(0.1), lit(0.3), lit(0.6)],
            context_window: 64,
            unk_mode: UnkMode::Error,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    words: HashMap<String, u64>,
}

/// Trained interpolated n-gram model. Immutable after training and freely
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct NGramModel<F: Scalar = Real> {
    options: NGramOptions<F>,
    vocabulary: BTreeSet<String>,
    /// levels[k-1] maps a (k-1)-word context to its continuation counts.
    levels: Vec<HashMap<Vec<String>, ContextCounts>>,
}

/// Trains a model on whitespace-tokenized sentences.
pub fn train_ngram<F: Scalar>(
    sentences: impl IntoIterator<Item = impl AsRef<str>>,
    options: NGramOptions<F>,
) -> Result<NGramModel<F>, ScoreError> {
    if options.order == 0 {
        return Err(ScoreError::InvalidTraining("order must be at least 1".into()));
    }
    if options.weights.len() != options.order {
        return Err(ScoreError::InvalidTraining(format!(
            "{} weights supplied for order {}",
            options.weights.len(),
            options.order
        )));
    }
    let mut weight_sum = 0.0f64;
    for w in &options.weights {
        let w = w.to_f64().expect("weight convertible");
        if !(0.0..=1.0).contains(&w) {
            return Err(ScoreError::InvalidTraining(format!("weight {w} out of [0,1]")));
        }
        weight_sum += w;
    }
    if (weight_sum - 1.0).abs() > 1e-12 {
        return Err(ScoreError::InvalidTraining(format!(
            "weights sum to {weight_sum}, expected 1"
        )));
    }

    let mut vocabulary: BTreeSet<String> = BTreeSet::new();
    vocabulary.insert(UNK_TOKEN.to_string());
    let mut levels: Vec<HashMap<Vec<String>, ContextCounts>> =
        vec![HashMap::new(); options.order];
    let mut any_token = false;
    for sentence in sentences {
        let words: Vec<String> = sentence
            .as_ref()
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .collect();
        for i in 0..words.len() {
            any_token = true;
            vocabulary.insert(words[i].clone());
            for k in 1..=options.order {
                if i + 1 < k {
                    continue;
                }
                let context = words[i + 1 - k..i].to_vec();
                let counts = levels[k - 1].entry(context).or_default();
                counts.total += 1;
                *counts.words.entry(words[i].clone()).or_insert(0) += 1;
            }
        }
    }
    if !any_token {
        return Err(ScoreError::InvalidTraining("empty training corpus".into()));
    }
    Ok(NGramModel { options, vocabulary, levels })
}

impl<F: Scalar> NGramModel<F> {
    pub fn order(&self) -> usize {
        self.options.order
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    /// Interpolated P(word | history). The history is truncated to the last
    /// `min(order-1, context_window)` entries; lookups are case-sensitive on
    /// already-lowercased words.
    pub fn conditional_prob(&self, history: &[&str], word: &str) -> F {
        let max_hist = (self.options.order - 1).min(self.options.context_window);
        let hist = &history[history.len().saturating_sub(max_hist)..];

        let mut available: Vec<(F, &ContextCounts)> = Vec::with_capacity(self.options.order);
        for k in 1..=self.options.order {
            if k - 1 > hist.len() {
                break;
            }
            let context: Vec<String> =
                hist[hist.len() - (k - 1)..].iter().map(|w| w.to_string()).collect();
            if let Some(counts) = self.levels[k - 1].get(&context) {
                available.push((self.options.weights[k - 1], counts));
            }
        }
        debug_assert!(!available.is_empty(), "unigram level is always observed");

        let total_weight: F = available.iter().map(|(w, _)| *w).fold(F::zero(), |a, b| a + b);
        let uniform = total_weight == F::zero();
        let n_available = lit::<F>(available.len() as f64);
        available
            .iter()
            .map(|(w, counts)| {
                let share = if uniform { F::one() / n_available } else { *w / total_weight };
                let count = counts.words.get(word).copied().unwrap_or(0);
                share * lit::<F>(count as f64) / lit::<F>(counts.total as f64)
            })
            .fold(F::zero(), |a, b| a + b)
    }

    /// Maps a surface word to its vocabulary entry per the UNK mode.
    fn lookup_word(&self, word: &str) -> Result<String, ScoreError> {
        let lower = word.to_lowercase();
        if self.vocabulary.contains(&lower) {
            return Ok(lower);
        }
        match self.options.unk_mode {
            UnkMode::Error => Err(ScoreError::UnknownWord(word.to_string())),
            UnkMode::Map => Ok(UNK_TOKEN.to_string()),
        }
    }
}

impl<F: Scalar> ScoreBackend for NGramModel<F> {
    fn backend_id(&self) -> &str {
        "ngram-oracle"
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        let context_words: Vec<String> = request
            .context
            .split_whitespace()
            .map(|w| self.lookup_word(w))
            .collect::<Result<_, _>>()?;
        let surface = tokenize_spans(&request.continuation);
        if surface.is_empty() {
            return Err(ScoreError::EmptyContinuation);
        }
        let continuation_words: Vec<String> = surface
            .iter()
            .map(|(text, _)| self.lookup_word(text.trim()))
            .collect::<Result<_, _>>()?;

        let mut stream: Vec<&str> = context_words.iter().map(String::as_str).collect();
        let mut tokens = Vec::with_capacity(surface.len());
        for ((text, span), word) in surface.into_iter().zip(&continuation_words) {
            let p = self.conditional_prob(&stream, word);
            if p <= F::zero() {
                return Err(ScoreError::ZeroProbability { token: text });
            }
            let logprob = p.ln().to_f64().expect("logprob convertible");
            tokens.push(ScoredToken { text, logprob, span });
            stream.push(word);
        }
        let seq = ScoredSequence::from_tokens(self.backend_id(), tokens);
        seq.validate(&request.continuation)?;
        Ok(seq)
    }
}
