//! Per-verb structural preference scores and preference-order correlations.
//!
//! A verb's PO preference is the mean unconditioned log-probability
//! difference between the PO and DO renderings of the prime sentences that
//! use it. Models are compared to each other and to a human ranking by
//! Spearman correlation over the induced verb orders; the human ranking is
//! always ingested from a CSV, never computed.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Condition, PrimeTargetItem, SlotId};
use crate::scoring::{ScoreBackend, ScoreError, ScoreRequest};
use crate::stats;
use crate::Real;

#[derive(Debug, Error)]
pub enum PrefsError {
    #[error("no frames for verb '{verb}'")]
    EmptyFrames { verb: String },
    #[error("item {item_id} does not use verb '{verb}' (found '{found}')")]
    WrongVerb { item_id: String, verb: String, found: String },
    #[error("item {item_id}")]
    Score {
        item_id: String,
        #[source]
        source: ScoreError,
    },
    #[error(
        "preference orders '{a}' and '{b}' rank different verb sets; \
         only in '{a}': [{only_a}]; only in '{b}': [{only_b}]"
    )]
    VerbSetMismatch { a: String, b: String, only_a: String, only_b: String },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Structural preference of one verb under one model. Positive means
/// PO-preferring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbPreference {
    pub model_id: String,
    pub verb: String,
    pub po_pref: Real,
    pub n_frames: usize,
}

/// Mean over frames of logP(prime PO) − logP(prime DO), both unconditioned.
pub fn po_pref<B: ScoreBackend + ?Sized>(
    model_id: &str,
    verb: &str,
    frames: &[&PrimeTargetItem],
    backend: &B,
) -> Result<VerbPreference, PrefsError> {
    if frames.is_empty() {
        return Err(PrefsError::EmptyFrames { verb: verb.to_string() });
    }
    let mut sum = 0.0;
    for frame in frames {
        let found = frame.prime_words.get(&SlotId::V).map(String::as_str).unwrap_or("");
        if found != verb {
            return Err(PrefsError::WrongVerb {
                item_id: frame.id.clone(),
                verb: verb.to_string(),
                found: found.to_string(),
            });
        }
        let wrap = |source| PrefsError::Score { item_id: frame.id.clone(), source };
        let score = |sentence: &str| -> Result<Real, PrefsError> {
            let request = ScoreRequest::unconditioned(model_id, sentence).map_err(wrap)?;
            Ok(backend.score(&request).map_err(wrap)?.total_logprob)
        };
        sum += score(&frame.prime_po)? - score(&frame.prime_do)?;
    }
    Ok(VerbPreference {
        model_id: model_id.to_string(),
        verb: verb.to_string(),
        po_pref: sum / frames.len() as Real,
        n_frames: frames.len(),
    })
}

/// Core-condition items grouped by their prime verb.
pub fn core_frames_by_verb(
    items: &[PrimeTargetItem],
) -> BTreeMap<String, Vec<&PrimeTargetItem>> {
    let mut groups: BTreeMap<String, Vec<&PrimeTargetItem>> = BTreeMap::new();
    for item in items.iter().filter(|i| i.condition == Condition::Core) {
        if let Some(verb) = item.prime_words.get(&SlotId::V) {
            groups.entry(verb.clone()).or_default().push(item);
        }
    }
    groups
}

/// Preferences for every prime verb of the Core items, in verb order.
pub fn model_preferences<B: ScoreBackend + Sync + ?Sized>(
    model_id: &str,
    items: &[PrimeTargetItem],
    backend: &B,
) -> Result<Vec<VerbPreference>, PrefsError> {
    let groups: Vec<(String, Vec<&PrimeTargetItem>)> =
        core_frames_by_verb(items).into_iter().collect();
    groups
        .into_par_iter()
        .map(|(verb, frames)| po_pref(model_id, &verb, &frames, backend))
        .collect()
}

/// A ranking of the verb set by structural preference. Ranks are 1-based and
/// may tie; smaller rank means more PO-preferring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceOrder {
    pub source_id: String,
    pub ranks: BTreeMap<String, Real>,
}

impl PreferenceOrder {
    /// Ranks verbs by descending preference, averaging exact ties.
    pub fn from_preferences(source_id: &str, prefs: &[VerbPreference]) -> PreferenceOrder {
        let negated: Vec<Real> = prefs.iter().map(|p| -p.po_pref).collect();
        let ranks = stats::average_ranks(&negated);
        PreferenceOrder {
            source_id: source_id.to_string(),
            ranks: prefs.iter().zip(ranks).map(|(p, r)| (p.verb.clone(), r)).collect(),
        }
    }

    /// Reads a "verb,rank" CSV of externally supplied ranks.
    pub fn from_rank_csv(source_id: &str, path: impl AsRef<Path>) -> Result<PreferenceOrder, PrefsError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let mut reader = csv::Reader::from_path(path)?;
        let mut ranks = BTreeMap::new();
        for (idx, record) in reader.deserialize::<(String, Real)>().enumerate() {
            let (verb, rank) = record.map_err(|e| PrefsError::Parse {
                file: file.clone(),
                line: idx + 2,
                msg: e.to_string(),
            })?;
            if ranks.insert(verb.clone(), rank).is_some() {
                return Err(PrefsError::Parse {
                    file,
                    line: idx + 2,
                    msg: format!("verb '{verb}' is ranked twice"),
                });
            }
        }
        Ok(PreferenceOrder { source_id: source_id.to_string(), ranks })
    }

    /// Verbs sorted by ascending rank (most PO-preferring first); rank ties
    /// fall back to lexicographic order.
    pub fn ranked_verbs(&self) -> Vec<&str> {
        let mut verbs: Vec<(&str, Real)> =
            self.ranks.iter().map(|(v, &r)| (v.as_str(), r)).collect();
        verbs.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(b.0)));
        verbs.into_iter().map(|(v, _)| v).collect()
    }
}

/// Spearman correlation between two rankings of the same verb set.
pub fn preference_correlation(
    a: &PreferenceOrder,
    b: &PreferenceOrder,
) -> Result<Option<Real>, PrefsError> {
    let only_a: Vec<&str> =
        a.ranks.keys().filter(|v| !b.ranks.contains_key(*v)).map(String::as_str).collect();
    let only_b: Vec<&str> =
        b.ranks.keys().filter(|v| !a.ranks.contains_key(*v)).map(String::as_str).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(PrefsError::VerbSetMismatch {
            a: a.source_id.clone(),
            b: b.source_id.clone(),
            only_a: only_a.join(", "),
            only_b: only_b.join(", "),
        });
    }
    let xs: Vec<Real> = a.ranks.values().copied().collect();
    let ys: Vec<Real> = a.ranks.keys().map(|v| b.ranks[v]).collect();
    Ok(stats::spearman(&xs, &ys))
}

/// Correlations for every unordered pair of orders, keyed "first|second" in
/// input order.
pub fn correlation_matrix(
    orders: &[PreferenceOrder],
) -> Result<BTreeMap<String, Option<Real>>, PrefsError> {
    let mut matrix = BTreeMap::new();
    for (i, a) in orders.iter().enumerate() {
        for b in &orders[i + 1..] {
            let key = format!("{}|{}", a.source_id, b.source_id);
            matrix.insert(key, preference_correlation(a, b)?);
        }
    }
    Ok(matrix)
}

/// Writes "model_id,verb,po_pref,n_frames" rows.
pub fn write_preferences_csv(
    path: impl AsRef<Path>,
    prefs: &[VerbPreference],
) -> Result<(), PrefsError> {
    let mut writer = csv::Writer::from_path(path)?;
    for pref in prefs {
        writer.serialize(pref)?;
    }
    writer.flush()?;
    Ok(())
}
