//! Run configuration: one TOML document describing the whole experiment.
//!
//! Everything a run needs lives here so results are reproducible from the
//! config alone. Environment variables override endpoint credentials only.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use primelens::corpus::Condition;
use primelens::regress::SurprisalMode;
use primelens::scoring::LogBase;

/// Top-level configuration document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory all artifacts are written under.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Omit wall-clock fields from outputs so reruns are byte-identical.
    #[serde(default)]
    pub deterministic_output: bool,
    pub corpus: CorpusConfig,
    #[serde(rename = "backend")]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub prefs: PrefsConfig,
    pub regression: Option<RegressionConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Conditions to generate and analyze; omitted means all nine.
    pub conditions: Option<Vec<String>>,
    pub n_items: usize,
    #[serde(default)]
    pub seed: u64,
    pub lexicon: PathBuf,
    pub norms: PathBuf,
    pub embeddings: PathBuf,
    pub cos_threshold: Option<f64>,
    pub attempts_per_item: Option<usize>,
}

/// One scoring backend, keyed by the model id recorded on every request.
#[derive(Debug, Clone, Deserialize)]
pub struct BackendConfig {
    pub model_id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// In-process interpolated n-gram model.
    Oracle {
        order: Option<usize>,
        weights: Option<Vec<f64>>,
        context_window: Option<usize>,
        /// Training sentences, one per line.
        train_file: Option<PathBuf>,
        /// Train on all four renderings of the generated corpus instead.
        #[serde(default)]
        train_on_corpus: bool,
        /// Optional congruence boost in nats added to the final token of
        /// structurally congruent continuations.
        gamma: Option<f64>,
        cache: Option<PathBuf>,
    },
    /// OpenAI-compatible completions endpoint with echoed logprobs.
    Endpoint {
        base_url: String,
        path: Option<String>,
        log_base: Option<LogBase>,
        separator: Option<String>,
        max_in_flight: Option<usize>,
        max_attempts: Option<u32>,
        timeout_secs: Option<u64>,
        /// Required: scoring writes through it and analysis reads from it.
        cache: PathBuf,
    },
    /// Frozen scores only; any miss is reported as incomplete data.
    Cache { cache: PathBuf },
}

impl BackendConfig {
    /// The cache path, if this backend persists scores.
    pub fn cache_path(&self) -> Option<&Path> {
        match &self.kind {
            BackendKind::Oracle { cache, .. } => cache.as_deref(),
            BackendKind::Endpoint { cache, .. } => Some(cache),
            BackendKind::Cache { cache } => Some(cache),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Also write summaries recomputed from post-divergence effects.
    #[serde(default = "default_true")]
    pub delta: bool,
    /// Tolerance for the decomposition and antisymmetry invariant suites.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_true() -> bool {
    true
}

fn default_tolerance() -> f64 {
    1e-9
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { delta: true, tolerance: default_tolerance() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefsConfig {
    /// "verb,rank" CSV with an externally supplied preference order; enables
    /// correlations against it.
    pub human_ranks: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    #[serde(default)]
    pub sample_seed: u64,
    /// Row quota drawn from the Core condition; omitted takes every row.
    pub n_core: Option<usize>,
    /// Row quota drawn from all other conditions combined.
    pub n_other: Option<usize>,
    #[serde(default)]
    pub surprisal_mode: SurprisalMode,
    /// Sentence embeddings keyed by full rendering; omitted falls back to
    /// bag-of-words sums over the word embeddings.
    pub sentence_vectors: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.backends.is_empty() {
            bail!("at least one [[backend]] is required");
        }
        let mut seen = std::collections::HashSet::new();
        for backend in &self.backends {
            if backend.model_id.is_empty() {
                bail!("backend model_id must be non-empty");
            }
            if !seen.insert(&backend.model_id) {
                bail!("duplicate backend model_id '{}'", backend.model_id);
            }
            match &backend.kind {
                BackendKind::Oracle { train_file, train_on_corpus, weights, .. } => {
                    match (train_file, train_on_corpus) {
                        (Some(_), true) | (None, false) => bail!(
                            "backend '{}': set exactly one of train_file or train_on_corpus",
                            backend.model_id
                        ),
                        (Some(file), false) => require_file(file, "train_file")?,
                        (None, true) => {}
                    }
                    if let Some(weights) = weights {
                        if weights.iter().any(|w| !w.is_finite()) {
                            bail!("backend '{}': non-finite weight", backend.model_id);
                        }
                    }
                }
                BackendKind::Endpoint { base_url, .. } => {
                    if base_url.is_empty() {
                        bail!("backend '{}': base_url must be non-empty", backend.model_id);
                    }
                }
                BackendKind::Cache { cache } => require_file(cache, "cache")?,
            }
        }

        self.selected_conditions(None)?;
        require_file(&self.corpus.lexicon, "corpus.lexicon")?;
        require_file(&self.corpus.norms, "corpus.norms")?;
        require_file(&self.corpus.embeddings, "corpus.embeddings")?;
        if let Some(t) = self.corpus.cos_threshold {
            if !(t > 0.0) {
                bail!("corpus.cos_threshold must be positive, got {t}");
            }
        }
        if !(self.metrics.tolerance > 0.0) {
            bail!("metrics.tolerance must be positive, got {}", self.metrics.tolerance);
        }
        if let Some(path) = &self.prefs.human_ranks {
            require_file(path, "prefs.human_ranks")?;
        }
        if let Some(regression) = &self.regression {
            if let Some(path) = &regression.sentence_vectors {
                require_file(path, "regression.sentence_vectors")?;
            }
        }
        Ok(())
    }

    /// Conditions from the config, narrowed by a command-line CSV override.
    pub fn selected_conditions(&self, flag: Option<&str>) -> Result<Vec<Condition>> {
        let parse = |names: &[String]| -> Result<Vec<Condition>> {
            names
                .iter()
                .map(|name| name.parse::<Condition>().map_err(|e| anyhow!(e)))
                .collect()
        };
        let configured = match &self.corpus.conditions {
            Some(names) => parse(names)?,
            None => Condition::ALL.to_vec(),
        };
        let Some(flag) = flag else { return Ok(configured) };
        let requested = parse(&split_csv(flag))?;
        for condition in &requested {
            if !configured.contains(condition) {
                bail!("condition {condition} is not part of this config");
            }
        }
        Ok(requested)
    }

    /// Backends from the config, narrowed by a command-line CSV override.
    pub fn selected_backends(&self, flag: Option<&str>) -> Result<Vec<&BackendConfig>> {
        let Some(flag) = flag else { return Ok(self.backends.iter().collect()) };
        split_csv(flag)
            .iter()
            .map(|id| {
                self.backends
                    .iter()
                    .find(|b| b.model_id == *id)
                    .ok_or_else(|| anyhow!("no backend with model_id '{id}'"))
            })
            .collect()
    }
}

fn split_csv(s: &str) -> Vec<String> {
    s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what}: no such file {}", path.display());
    }
    Ok(())
}
