//! Shared plumbing between the subcommands: failure classification for the
//! exit-code contract, resource loading, backend construction, and the
//! enumeration of every scoring leg a run needs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};

use primelens::corpus::{
    read_items, AssociationNorms, Condition, EmbeddingTable, Lexicon, PrimeTargetItem,
};
use primelens::metrics::Leg;
use primelens::scoring::synthetic::GammaCongruenceOracle;
use primelens::scoring::{
    train_ngram, CacheOnlyBackend, CachedBackend, EndpointConfig, NGramOptions, ScoreBackend,
    ScoreCache, ScoreError, ScoreRequest, UnkMode, WireBackend, API_KEY_ENV,
};

use crate::config::{BackendConfig, BackendKind, RunConfig};

/// Process exit codes: 0 success, 2 invariant failure, 3 incomplete data,
/// 4 configuration error, 1 anything else.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Incomplete(anyhow::Error),
    Invariant(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Other(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Incomplete(_) => 3,
            Failure::Config(_) => 4,
        }
    }

    pub fn inner(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Incomplete(e) | Failure::Invariant(e) | Failure::Other(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

pub fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

pub fn incomplete(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Incomplete(e.into())
}

pub fn invariant(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invariant(e.into())
}

/// One run's resolved settings: config plus command-line narrowing.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub conditions: Vec<Condition>,
    pub models: Vec<BackendConfig>,
    pub seed: u64,
    pub deterministic: bool,
}

impl Ctx {
    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }

    pub fn corpus_path(&self, condition: Condition) -> PathBuf {
        self.corpus_dir().join(format!("{}.jsonl", condition.name()))
    }

    pub fn results_dir(&self, model_id: &str) -> PathBuf {
        self.out.join("results").join(model_id)
    }

    pub fn prefs_dir(&self) -> PathBuf {
        self.out.join("prefs")
    }

    pub fn regression_dir(&self) -> PathBuf {
        self.out.join("regression")
    }

    pub fn load_resources(&self) -> Result<(Lexicon, AssociationNorms, EmbeddingTable)> {
        let corpus = &self.config.corpus;
        let lexicon = Lexicon::load(&corpus.lexicon)
            .with_context(|| format!("loading lexicon {}", corpus.lexicon.display()))?;
        let norms = AssociationNorms::load(&corpus.norms)
            .with_context(|| format!("loading norms {}", corpus.norms.display()))?;
        let embeddings = EmbeddingTable::load(&corpus.embeddings)
            .with_context(|| format!("loading embeddings {}", corpus.embeddings.display()))?;
        Ok((lexicon, norms, embeddings))
    }

    /// Items for one condition, from the file cmd_generate wrote.
    pub fn load_condition(&self, condition: Condition) -> Result<Vec<PrimeTargetItem>, Failure> {
        let path = self.corpus_path(condition);
        if !path.is_file() {
            return Err(incomplete(anyhow!(
                "no corpus file {} (run `generate` first)",
                path.display()
            )));
        }
        read_items(&path).map_err(|e| Failure::Other(anyhow!(e).context("reading corpus")))
    }

    /// Items for every selected condition, keeping per-condition grouping.
    pub fn load_corpus(&self) -> Result<Vec<(Condition, Vec<PrimeTargetItem>)>, Failure> {
        self.conditions
            .iter()
            .map(|&c| Ok((c, self.load_condition(c)?)))
            .collect()
    }
}

/// Sentences an on-corpus oracle trains on: all four renderings of every
/// item, plus the two structurally congruent prime-target concatenations.
/// The concatenations give cross-sentence n-grams mass, so conditioning on
/// a congruent prime genuinely raises the target's probability; training on
/// isolated sentences would leave every priming effect at exactly zero.
fn corpus_training_sentences(corpus: &[(Condition, Vec<PrimeTargetItem>)]) -> Vec<String> {
    let mut sentences = Vec::new();
    for (_, items) in corpus {
        for item in items {
            sentences.push(item.prime_po.clone());
            sentences.push(item.prime_do.clone());
            sentences.push(item.target_po.clone());
            sentences.push(item.target_do.clone());
            sentences.push(format!("{} {}", item.prime_po, item.target_po));
            sentences.push(format!("{} {}", item.prime_do, item.target_do));
        }
    }
    sentences
}

fn ngram_options(
    order: Option<usize>,
    weights: Option<&Vec<f64>>,
    context_window: Option<usize>,
) -> NGramOptions {
    let mut options = NGramOptions::default();
    if let Some(order) = order {
        options.order = order;
        // when only the order is given, fall back to uniform interpolation
        options.weights = vec![1.0 / order as f64; order];
    }
    if let Some(weights) = weights {
        options.weights = weights.clone();
    }
    if let Some(window) = context_window {
        options.context_window = window;
    }
    options.unk_mode = UnkMode::Map;
    options
}

fn open_cache(path: &Path) -> Result<Arc<ScoreCache>, Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating cache directory {}", parent.display()))
                .map_err(Failure::Other)?;
        }
    }
    let cache = ScoreCache::open(path)
        .map_err(|e| Failure::Other(anyhow!(e).context("opening cache")))?;
    for warning in cache.warnings() {
        eprintln!("warning: cache {}: {warning}", path.display());
    }
    Ok(Arc::new(cache))
}

/// A backend that can score fresh requests, plus the cache it writes
/// through, if any. Cache-kind backends cannot fetch; misses surface as
/// missing-row errors.
pub struct ScoringBackend {
    pub backend: Arc<dyn ScoreBackend>,
    pub cache: Option<Arc<ScoreCache>>,
}

fn oracle_backend(
    ctx: &Ctx,
    model: &BackendConfig,
    corpus: &[(Condition, Vec<PrimeTargetItem>)],
) -> Result<Arc<dyn ScoreBackend>, Failure> {
    let BackendKind::Oracle { order, weights, context_window, train_file, gamma, .. } = &model.kind
    else {
        unreachable!("caller matched the oracle kind")
    };
    let sentences = match train_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Other)?;
            text.lines().map(str::to_string).filter(|l| !l.trim().is_empty()).collect()
        }
        None => corpus_training_sentences(corpus),
    };
    let options = ngram_options(*order, weights.as_ref(), *context_window);
    let oracle = train_ngram(sentences, options)
        .map_err(|e| config_error(anyhow!(e).context(format!("training '{}'", model.model_id))))?;
    let mut backend: Arc<dyn ScoreBackend> = Arc::new(oracle);
    if let Some(gamma) = gamma {
        let (lexicon, _, _) = ctx.load_resources().map_err(Failure::Other)?;
        let mut prepositions: Vec<String> =
            lexicon.verbs.iter().map(|v| v.preposition.clone()).collect();
        prepositions.sort();
        prepositions.dedup();
        backend = Arc::new(GammaCongruenceOracle::with_prepositions(backend, *gamma, prepositions));
    }
    Ok(backend)
}

/// Backend used by cmd_score: capable of producing new scores.
pub fn scoring_backend(
    ctx: &Ctx,
    model: &BackendConfig,
    corpus: &[(Condition, Vec<PrimeTargetItem>)],
) -> Result<ScoringBackend, Failure> {
    let cache = match model.cache_path() {
        Some(path) => Some(open_cache(path)?),
        None => None,
    };
    let backend: Arc<dyn ScoreBackend> = match &model.kind {
        BackendKind::Oracle { .. } => oracle_backend(ctx, model, corpus)?,
        BackendKind::Endpoint {
            base_url,
            path,
            log_base,
            separator,
            max_in_flight,
            max_attempts,
            timeout_secs,
            ..
        } => {
            let mut endpoint = EndpointConfig::new(base_url.clone());
            if let Some(path) = path {
                endpoint.path = path.clone();
            }
            if let Some(base) = log_base {
                endpoint.log_base = *base;
            }
            if let Some(separator) = separator {
                endpoint.separator = separator.clone();
            }
            if let Some(cap) = max_in_flight {
                endpoint.max_in_flight = *cap;
            }
            if let Some(attempts) = max_attempts {
                endpoint.max_attempts = *attempts;
            }
            if let Some(secs) = timeout_secs {
                endpoint.timeout = std::time::Duration::from_secs(*secs);
            }
            // the config document pins the endpoint; only credentials come
            // from the environment
            if let Ok(key) = std::env::var(API_KEY_ENV) {
                endpoint.api_key = Some(key);
            }
            let wire = WireBackend::new(endpoint).map_err(config_error)?;
            Arc::new(wire)
        }
        BackendKind::Cache { .. } => {
            let cache = cache.clone().expect("cache kind always has a path");
            Arc::new(CacheOnlyBackend::new(cache))
        }
    };
    Ok(ScoringBackend { backend, cache })
}

/// Backend used by the analysis commands: never touches the network. Oracles
/// are rebuilt and score directly; endpoint and cache kinds read their cache
/// only, so an incomplete cache surfaces as missing rows.
pub fn analysis_backend(
    ctx: &Ctx,
    model: &BackendConfig,
    corpus: &[(Condition, Vec<PrimeTargetItem>)],
) -> Result<Arc<dyn ScoreBackend>, Failure> {
    match &model.kind {
        BackendKind::Oracle { cache, .. } => {
            let oracle = oracle_backend(ctx, model, corpus)?;
            match cache {
                Some(path) => {
                    let cache = open_cache(path)?;
                    Ok(Arc::new(CachedBackend::new(oracle, cache)))
                }
                None => Ok(oracle),
            }
        }
        BackendKind::Endpoint { cache, .. } | BackendKind::Cache { cache } => {
            let cache = open_cache(cache)?;
            Ok(Arc::new(CacheOnlyBackend::new(cache)))
        }
    }
}

/// Dispatches requests to the backend registered for their model id, so row
/// construction can resolve surprisals for several models at once.
pub struct ModelMux {
    backends: HashMap<String, Arc<dyn ScoreBackend>>,
}

impl ModelMux {
    pub fn new(backends: impl IntoIterator<Item = (String, Arc<dyn ScoreBackend>)>) -> Self {
        ModelMux { backends: backends.into_iter().collect() }
    }
}

impl ScoreBackend for ModelMux {
    fn backend_id(&self) -> &str {
        "model-mux"
    }

    fn score(&self, request: &ScoreRequest) -> Result<primelens::scoring::ScoredSequence, ScoreError> {
        let backend = self.backends.get(&request.model_id).ok_or_else(|| {
            ScoreError::Config(format!("no backend for model '{}'", request.model_id))
        })?;
        backend.score(request)
    }
}

/// One scoring job with the words to report it by.
pub struct PlannedLeg {
    pub item_id: String,
    pub describe: String,
    pub request: ScoreRequest,
}

/// Every request one model needs: the four priming legs per item, the two
/// unconditioned prime legs per Core item (verb preferences), and, when a
/// regression is configured, the surprisal legs its mode calls for.
/// Deduplicated, in deterministic order.
pub fn planned_legs(
    ctx: &Ctx,
    model_id: &str,
    corpus: &[(Condition, Vec<PrimeTargetItem>)],
) -> Result<Vec<PlannedLeg>, Failure> {
    let mut seen = std::collections::HashSet::new();
    let mut legs = Vec::new();
    let mut push = |item_id: &str, describe: String, request: ScoreRequest| {
        if seen.insert(request.clone()) {
            legs.push(PlannedLeg { item_id: item_id.to_string(), describe, request });
        }
    };

    let surprisal_mode = ctx.config.regression.as_ref().map(|r| r.surprisal_mode);
    for (condition, items) in corpus {
        for item in items {
            for leg in Leg::ALL {
                let request =
                    ScoreRequest::new(model_id, item.prime(leg.prime()), item.target(leg.target()))
                        .map_err(|e| Failure::Other(anyhow!(e)))?;
                push(&item.id, leg.to_string(), request);
            }
            let mut unconditioned = |describe: &str, sentence: &str| {
                let request = ScoreRequest::unconditioned(model_id, sentence)
                    .map_err(|e| Failure::Other(anyhow!(e)))?;
                push(&item.id, format!("unconditioned {describe}"), request);
                Ok::<(), Failure>(())
            };
            if *condition == Condition::Core {
                unconditioned("prime_po", &item.prime_po)?;
                unconditioned("prime_do", &item.prime_do)?;
            }
            match surprisal_mode {
                None => {}
                Some(mode) => {
                    unconditioned("prime_po", &item.prime_po)?;
                    unconditioned("prime_do", &item.prime_do)?;
                    if mode == primelens::regress::SurprisalMode::Unconditioned {
                        unconditioned("target_po", &item.target_po)?;
                        unconditioned("target_do", &item.target_do)?;
                    }
                    // the incongruent-prime mode reuses two priming legs
                }
            }
        }
    }
    Ok(legs)
}
