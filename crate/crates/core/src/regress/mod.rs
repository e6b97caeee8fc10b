//! Factor tables and random-intercept mixed-model fits.
//!
//! Every (item, model) pair becomes one row holding both post-divergence
//! responses and seventeen fixed-effect factors: prime/target similarities,
//! lexical-overlap flags, unconditioned surprisals, and verb preferences.
//! Factors are centred and scaled before fitting; the two responses are
//! fitted separately on the same rows with a by-model random intercept.

pub mod lmm;

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{cosine, EmbeddingTable, PrimeTargetItem, SlotId};
use crate::metrics::PEResult;
use crate::prefs::VerbPreference;
use crate::scoring::{ScoreBackend, ScoreRequest};
use crate::stats::{self, normal};
use crate::Real;
use lmm::{Design, LmmError, LmmOptions};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("need at least {need} rows, found {found}")]
    TooFewRows { need: usize, found: usize },
    #[error("unknown factor column '{0}'")]
    UnknownColumn(String),
    #[error(transparent)]
    Lmm(#[from] LmmError),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One observation of the factor table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub item_id: String,
    pub model_id: String,
    pub response_po: Real,
    pub response_do: Real,
    pub sim_n1: Real,
    pub sim_n2: Real,
    pub sim_n3: Real,
    pub sim_v: Real,
    pub sim_s: Real,
    pub overlap_n1: Real,
    pub overlap_n2: Real,
    pub overlap_n3: Real,
    pub overlap_det: Real,
    pub overlap_verb: Real,
    pub overlap_prep: Real,
    pub surp_prime_po: Real,
    pub surp_prime_do: Real,
    pub surp_target_po: Real,
    pub surp_target_do: Real,
    pub pref_vp: Real,
    pub pref_vt: Real,
}

/// Which post-divergence response a fit predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Response {
    PO,
    DO,
}

impl Response {
    pub fn column(self) -> &'static str {
        match self {
            Response::PO => "response_po",
            Response::DO => "response_do",
        }
    }
}

impl RegressionRow {
    pub const FACTOR_NAMES: [&'static str; 17] = [
        "sim_n1",
        "sim_n2",
        "sim_n3",
        "sim_v",
        "sim_s",
        "overlap_n1",
        "overlap_n2",
        "overlap_n3",
        "overlap_det",
        "overlap_verb",
        "overlap_prep",
        "surp_prime_po",
        "surp_prime_do",
        "surp_target_po",
        "surp_target_do",
        "pref_vp",
        "pref_vt",
    ];

    pub fn factors(&self) -> [Real; 17] {
        [
            self.sim_n1,
            self.sim_n2,
            self.sim_n3,
            self.sim_v,
            self.sim_s,
            self.overlap_n1,
            self.overlap_n2,
            self.overlap_n3,
            self.overlap_det,
            self.overlap_verb,
            self.overlap_prep,
            self.surp_prime_po,
            self.surp_prime_do,
            self.surp_target_po,
            self.surp_target_do,
            self.pref_vp,
            self.pref_vt,
        ]
    }

    pub fn set_factors(&mut self, v: [Real; 17]) {
        [
            self.sim_n1,
            self.sim_n2,
            self.sim_n3,
            self.sim_v,
            self.sim_s,
            self.overlap_n1,
            self.overlap_n2,
            self.overlap_n3,
            self.overlap_det,
            self.overlap_verb,
            self.overlap_prep,
            self.surp_prime_po,
            self.surp_prime_do,
            self.surp_target_po,
            self.surp_target_do,
            self.pref_vp,
            self.pref_vt,
        ] = v;
    }

    pub fn response(&self, response: Response) -> Real {
        match response {
            Response::PO => self.response_po,
            Response::DO => self.response_do,
        }
    }
}

/// A row that could not be built, with the first reason encountered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRejection {
    pub item_id: String,
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BuiltRows {
    pub rows: Vec<RegressionRow>,
    pub rejected: Vec<RowRejection>,
}

/// Which scoring leg defines the four surprisal columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurprisalMode {
    /// Every sentence scored with empty context.
    #[default]
    Unconditioned,
    /// Target sentences scored after the structurally incongruent prime;
    /// prime sentences stay unconditioned. Reuses two of the priming legs,
    /// and keeps the congruence boost itself out of the covariate.
    IncongruentPrime,
}

/// Everything row construction resolves factors against. The backend scores
/// the surprisal legs; in the pipeline it is cache-only.
pub struct FactorResources<'a, B: ?Sized> {
    pub embeddings: &'a EmbeddingTable,
    /// Keyed by the full rendering string.
    pub sentence_vectors: &'a EmbeddingTable,
    pub prefs: &'a [VerbPreference],
    pub backend: &'a B,
    pub surprisal_mode: SurprisalMode,
}

fn build_row<B: ScoreBackend + ?Sized>(
    item: &PrimeTargetItem,
    result: &PEResult,
    prefs: &HashMap<(&str, &str), Real>,
    resources: &FactorResources<B>,
) -> Result<RegressionRow, RowRejection> {
    let reject = |reason: String| RowRejection {
        item_id: result.item_id.clone(),
        model_id: result.model_id.clone(),
        reason,
    };

    let word = |words: &'_ crate::corpus::SlotWordMap, slot: SlotId| -> Result<String, RowRejection> {
        words
            .get(&slot)
            .cloned()
            .ok_or_else(|| reject(format!("item has no word for slot {slot}")))
    };
    let embedding = |w: &str| -> Result<&[Real], RowRejection> {
        resources.embeddings.get(w).ok_or_else(|| reject(format!("no embedding for '{w}'")))
    };
    let sim = |slot: SlotId| -> Result<Real, RowRejection> {
        let p = word(&item.prime_words, slot)?;
        let t = word(&item.target_words, slot)?;
        Ok(cosine(embedding(&p)?, embedding(&t)?))
    };
    let flag = |slot: SlotId| -> Result<Real, RowRejection> {
        Ok((word(&item.prime_words, slot)? == word(&item.target_words, slot)?) as u8 as Real)
    };
    let all_dets = |slots: &[SlotId]| -> Result<Real, RowRejection> {
        for &slot in slots {
            if flag(slot)? == 0.0 {
                return Ok(0.0);
            }
        }
        Ok(1.0)
    };
    let sentence_vec = |s: &str| -> Result<&[Real], RowRejection> {
        resources
            .sentence_vectors
            .get(s)
            .ok_or_else(|| reject(format!("no sentence vector for '{s}'")))
    };
    let surprisal = |context: &str, sentence: &str| -> Result<Real, RowRejection> {
        let request = ScoreRequest::new(&result.model_id, context, sentence)
            .map_err(|e| reject(e.to_string()))?;
        let total =
            resources.backend.score(&request).map_err(|e| reject(e.to_string()))?.total_logprob;
        if total > 0.0 {
            return Err(reject(format!("positive log-probability {total} for '{sentence}'")));
        }
        Ok(-total)
    };
    let (target_po_ctx, target_do_ctx) = match resources.surprisal_mode {
        SurprisalMode::Unconditioned => ("", ""),
        SurprisalMode::IncongruentPrime => (item.prime_do.as_str(), item.prime_po.as_str()),
    };
    let pref = |verb: &str| -> Result<Real, RowRejection> {
        prefs
            .get(&(result.model_id.as_str(), verb))
            .copied()
            .ok_or_else(|| reject(format!("no preference for verb '{verb}'")))
    };

    Ok(RegressionRow {
        item_id: result.item_id.clone(),
        model_id: result.model_id.clone(),
        response_po: result.s_delta_pe_po,
        response_do: result.s_delta_pe_do,
        sim_n1: sim(SlotId::N1)?,
        sim_n2: sim(SlotId::N2)?,
        sim_n3: sim(SlotId::N3)?,
        sim_v: sim(SlotId::V)?,
        sim_s: cosine(sentence_vec(&item.target_po)?, sentence_vec(&item.prime_po)?),
        overlap_n1: flag(SlotId::N1)?,
        overlap_n2: flag(SlotId::N2)?,
        overlap_n3: flag(SlotId::N3)?,
        overlap_det: all_dets(&[SlotId::DT1, SlotId::DT2, SlotId::DT3])?,
        overlap_verb: flag(SlotId::V)?,
        overlap_prep: flag(SlotId::P)?,
        surp_prime_po: surprisal("", &item.prime_po)?,
        surp_prime_do: surprisal("", &item.prime_do)?,
        surp_target_po: surprisal(target_po_ctx, &item.target_po)?,
        surp_target_do: surprisal(target_do_ctx, &item.target_do)?,
        pref_vp: pref(&word(&item.prime_words, SlotId::V)?)?,
        pref_vt: pref(&word(&item.target_words, SlotId::V)?)?,
    })
}

/// One row per PE result whose factors all resolve; the rest are returned
/// as counted rejections, in input order.
pub fn build_rows<B: ScoreBackend + Sync + ?Sized>(
    items: &[PrimeTargetItem],
    pe_results: &[PEResult],
    resources: &FactorResources<B>,
) -> BuiltRows {
    let item_index: HashMap<&str, &PrimeTargetItem> =
        items.iter().map(|i| (i.id.as_str(), i)).collect();
    let pref_index: HashMap<(&str, &str), Real> = resources
        .prefs
        .iter()
        .map(|p| ((p.model_id.as_str(), p.verb.as_str()), p.po_pref))
        .collect();

    let outcomes: Vec<Result<RegressionRow, RowRejection>> = pe_results
        .par_iter()
        .map(|result| {
            let item = item_index.get(result.item_id.as_str()).ok_or_else(|| RowRejection {
                item_id: result.item_id.clone(),
                model_id: result.model_id.clone(),
                reason: "no item with this id".into(),
            })?;
            build_row(item, result, &pref_index, resources)
        })
        .collect();

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(rejection) => rejected.push(rejection),
        }
    }
    BuiltRows { rows, rejected }
}

/// Bag-of-words sentence vectors: the sum of the word vectors of every
/// embedded word in each of an item's four renderings.
pub fn bow_sentence_vectors(
    items: &[PrimeTargetItem],
    embeddings: &EmbeddingTable,
) -> Result<EmbeddingTable, crate::corpus::CorpusError> {
    let mut vectors: HashMap<String, Vec<Real>> = HashMap::new();
    for item in items {
        for sentence in [&item.prime_po, &item.prime_do, &item.target_po, &item.target_do] {
            if vectors.contains_key(sentence) {
                continue;
            }
            let mut sum = vec![0.0; embeddings.dimension()];
            for word in sentence.split_whitespace() {
                if let Some(v) = embeddings.get(&word.to_lowercase()) {
                    for (s, x) in sum.iter_mut().zip(v) {
                        *s += x;
                    }
                }
            }
            vectors.insert(sentence.clone(), sum);
        }
    }
    EmbeddingTable::new(vectors)
}

/// Deterministic seeded subsample: up to `n_core` rows satisfying `is_core`
/// plus up to `n_other` of the rest, preserving input order within each part.
pub fn sample_rows<'a>(
    rows: &'a [RegressionRow],
    is_core: impl Fn(&RegressionRow) -> bool,
    n_core: usize,
    n_other: usize,
    seed: u64,
) -> Vec<&'a RegressionRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (core, other): (Vec<&RegressionRow>, Vec<&RegressionRow>) =
        rows.iter().partition(|r| is_core(r));
    let mut pick = |pool: Vec<&'a RegressionRow>, n: usize| -> Vec<&'a RegressionRow> {
        if pool.len() <= n {
            return pool;
        }
        let mut idx = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i]).collect()
    };
    let mut sampled = pick(core, n_core);
    sampled.extend(pick(other, n_other));
    sampled
}

/// Affine scale of one factor column. `sd == 0` marks a dropped (constant)
/// column whose standardized values are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: Real,
    pub sd: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMetadata {
    /// Denominator convention for the variance, pinned for reproducibility.
    pub convention: String,
    pub columns: std::collections::BTreeMap<String, ColumnScale>,
    /// Constant columns, excluded from fitting.
    pub dropped: Vec<String>,
}

/// Centres and scales every factor column to unit sample variance; constant
/// columns are dropped (zeroed and recorded). Responses are left alone.
pub fn standardize(
    rows: &[RegressionRow],
) -> Result<(Vec<RegressionRow>, ScalingMetadata), RegressError> {
    if rows.len() < 2 {
        return Err(RegressError::TooFewRows { need: 2, found: rows.len() });
    }
    let factors: Vec<[Real; 17]> = rows.iter().map(RegressionRow::factors).collect();
    let mut out = rows.to_vec();
    let mut metadata = ScalingMetadata {
        convention: "sample variance, n-1 denominator".into(),
        columns: Default::default(),
        dropped: Vec::new(),
    };
    let mut transformed: Vec<[Real; 17]> = factors.clone();
    for (j, name) in RegressionRow::FACTOR_NAMES.iter().enumerate() {
        let column: Vec<Real> = factors.iter().map(|f| f[j]).collect();
        let mean = stats::mean(&column).expect("length checked");
        let sd = stats::sample_variance(&column).expect("length checked").sqrt();
        if sd > 0.0 {
            metadata.columns.insert(name.to_string(), ColumnScale { mean, sd });
            for (t, f) in transformed.iter_mut().zip(&factors) {
                t[j] = (f[j] - mean) / sd;
            }
        } else {
            metadata.columns.insert(name.to_string(), ColumnScale { mean, sd: 0.0 });
            metadata.dropped.push(name.to_string());
            for t in transformed.iter_mut() {
                t[j] = 0.0;
            }
        }
    }
    for (row, t) in out.iter_mut().zip(transformed) {
        row.set_factors(t);
    }
    Ok((out, metadata))
}

/// Inverts [`standardize`]; dropped columns come back as their constant.
pub fn unstandardize(rows: &[RegressionRow], metadata: &ScalingMetadata) -> Vec<RegressionRow> {
    let mut out = rows.to_vec();
    for row in out.iter_mut() {
        let mut f = row.factors();
        for (j, name) in RegressionRow::FACTOR_NAMES.iter().enumerate() {
            if let Some(scale) = metadata.columns.get(*name) {
                f[j] = f[j] * scale.sd + scale.mean;
            }
        }
        row.set_factors(f);
    }
    out
}

/// One reported fixed effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: Real,
    pub std_err: Real,
    pub z: Real,
    pub p: Real,
}

/// Reported mixed-model fit for one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub response: String,
    pub coefficients: Vec<Coefficient>,
    pub sigma2_residual: Real,
    pub sigma2_group: Real,
    pub loglik_reml: Real,
    /// var(Xβ̂) / (var(Xβ̂) + σ²_group + σ²_residual).
    pub r2_marginal: Real,
    pub r2_definition: String,
    pub converged: bool,
    pub n_obs: usize,
    pub n_groups: usize,
}

/// Fits one response on standardized rows with a by-model random intercept.
/// `dropped` columns (from [`standardize`]) are excluded from the design.
pub fn fit_lmm(
    rows: &[RegressionRow],
    response: Response,
    dropped: &[String],
    options: &LmmOptions,
) -> Result<LmmFit, RegressError> {
    for name in dropped {
        if !RegressionRow::FACTOR_NAMES.contains(&name.as_str()) {
            return Err(RegressError::UnknownColumn(name.clone()));
        }
    }
    let retained: Vec<usize> = (0..RegressionRow::FACTOR_NAMES.len())
        .filter(|&j| !dropped.iter().any(|d| d == RegressionRow::FACTOR_NAMES[j]))
        .collect();
    let mut names = vec!["Intercept".to_string()];
    names.extend(retained.iter().map(|&j| RegressionRow::FACTOR_NAMES[j].to_string()));

    let p = names.len();
    let mut x = Vec::with_capacity(rows.len() * p);
    let mut y = Vec::with_capacity(rows.len());
    let mut groups = Vec::with_capacity(rows.len());
    let mut group_index: HashMap<&str, usize> = HashMap::new();
    for row in rows {
        let factors = row.factors();
        x.push(1.0);
        x.extend(retained.iter().map(|&j| factors[j]));
        y.push(row.response(response));
        let next = group_index.len();
        groups.push(*group_index.entry(row.model_id.as_str()).or_insert(next));
    }

    let design = Design::new(names.clone(), x, y, groups)?;
    let raw = lmm::fit(&design, options)?;

    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let beta = raw.beta[j];
            let std_err = raw.cov[j * p + j].sqrt();
            let z = beta / std_err;
            Coefficient { name: name.clone(), beta, std_err, z, p: normal::two_sided_p(z) }
        })
        .collect();

    let fitted = design.linear_predictor(&raw.beta);
    let var_fixed = stats::sample_variance(&fitted).unwrap_or(0.0);
    let r2_marginal = var_fixed / (var_fixed + raw.sigma2_group + raw.sigma2_residual);

    Ok(LmmFit {
        response: response.column().to_string(),
        coefficients,
        sigma2_residual: raw.sigma2_residual,
        sigma2_group: raw.sigma2_group,
        loglik_reml: raw.loglik_reml,
        r2_marginal,
        r2_definition: "var(X*beta) / (var(X*beta) + sigma2_group + sigma2_residual)".into(),
        converged: raw.converged,
        n_obs: raw.n_obs,
        n_groups: raw.n_groups,
    })
}

/// Fixed-width coefficient table with the variance-component row at the end.
pub fn report_fit(fit: &LmmFit) -> String {
    let name_width = fit
        .coefficients
        .iter()
        .map(|c| c.name.len())
        .chain(["Group Var".len()])
        .max()
        .unwrap_or(9);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8}\n",
        "", "Coef.", "Std.Err.", "z", "P>|z|", "[0.025", "0.975]"
    ));
    for c in &fit.coefficients {
        let lo = c.beta - normal::Z_975 * c.std_err;
        let hi = c.beta + normal::Z_975 * c.std_err;
        out.push_str(&format!(
            "{:<name_width$} {:>10.3} {:>10.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            c.name, c.beta, c.std_err, c.z, c.p, lo, hi
        ));
    }
    out.push_str(&format!("{:<name_width$} {:>10.3}\n", "Group Var", fit.sigma2_group));
    out
}

/// Writes the factor table with the exact column names of [`RegressionRow`].
pub fn write_rows_csv(path: impl AsRef<Path>, rows: &[RegressionRow]) -> Result<(), RegressError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: impl AsRef<Path>) -> Result<Vec<RegressionRow>, RegressError> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (idx, record) in reader.deserialize().enumerate() {
        let row: RegressionRow = record.map_err(|e| RegressError::Parse {
            file: file.clone(),
            line: idx + 2,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}
