//! Priming-effect metrics.
//!
//! Each item is scored on four conditional legs: both target structures,
//! each after the congruent and the incongruent prime. The sentence-level
//! effect for a structure is the congruent-minus-incongruent log-probability
//! difference; the token-level effects are the same difference per aligned
//! slot, so the slot effects always sum back to the sentence effect. The
//! post-divergence variant drops the four-slot shared prefix, whose effects
//! are antisymmetric between structures by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align, slot_logprob, AlignError};
use crate::corpus::{Condition, PrimeTargetItem, SlotId, SlotTemplate, StructureLabel};
use crate::scoring::{ScoreBackend, ScoreError, ScoreRequest, ScoredSequence};
use crate::stats::{self, normal::Z_975};
use crate::Real;

/// The four conditional scoring legs of one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    TargetPoAfterPrimePo,
    TargetPoAfterPrimeDo,
    TargetDoAfterPrimeDo,
    TargetDoAfterPrimePo,
}

impl Leg {
    pub const ALL: [Leg; 4] = [
        Leg::TargetPoAfterPrimePo,
        Leg::TargetPoAfterPrimeDo,
        Leg::TargetDoAfterPrimeDo,
        Leg::TargetDoAfterPrimePo,
    ];

    pub fn prime(self) -> StructureLabel {
        match self {
            Leg::TargetPoAfterPrimePo | Leg::TargetDoAfterPrimePo => StructureLabel::PO,
            Leg::TargetPoAfterPrimeDo | Leg::TargetDoAfterPrimeDo => StructureLabel::DO,
        }
    }

    pub fn target(self) -> StructureLabel {
        match self {
            Leg::TargetPoAfterPrimePo | Leg::TargetPoAfterPrimeDo => StructureLabel::PO,
            Leg::TargetDoAfterPrimeDo | Leg::TargetDoAfterPrimePo => StructureLabel::DO,
        }
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "target_{}|prime_{}",
            self.target().to_string().to_lowercase(),
            self.prime().to_string().to_lowercase()
        )
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("item {item_id}, leg {leg}")]
    Leg {
        item_id: String,
        leg: Leg,
        #[source]
        source: ScoreError,
    },
    #[error("item {item_id}, {structure} target")]
    Align {
        item_id: String,
        structure: StructureLabel,
        #[source]
        source: AlignError,
    },
    #[error(
        "item {item_id}: the two {structure}-target legs tokenize the target differently ({detail}); \
         per-slot effects are not comparable"
    )]
    LegTokenization { item_id: String, structure: StructureLabel, detail: String },
    #[error("no results to summarize")]
    Empty,
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sign pattern of the two sentence-level effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    /// Both structures primed (both effects positive).
    Balanced,
    /// Only the PO effect is positive.
    SkewedPO,
    /// Only the DO effect is positive.
    SkewedDO,
    /// Neither effect is positive.
    Inverse,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] =
        [Quadrant::Balanced, Quadrant::SkewedPO, Quadrant::SkewedDO, Quadrant::Inverse];
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::Balanced => "Balanced",
            Quadrant::SkewedPO => "SkewedPO",
            Quadrant::SkewedDO => "SkewedDO",
            Quadrant::Inverse => "Inverse",
        })
    }
}

/// Exact zeros count as non-positive, so ties fall away from Balanced.
pub fn classify_quadrant(s_pe_po: Real, s_pe_do: Real) -> Quadrant {
    match (s_pe_po > 0.0, s_pe_do > 0.0) {
        (true, true) => Quadrant::Balanced,
        (true, false) => Quadrant::SkewedPO,
        (false, true) => Quadrant::SkewedDO,
        (false, false) => Quadrant::Inverse,
    }
}

/// Priming effects for one item under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PEResult {
    pub item_id: String,
    pub model_id: String,
    pub s_pe_po: Real,
    pub s_pe_do: Real,
    pub s_delta_pe_po: Real,
    pub s_delta_pe_do: Real,
    pub w_pe_po: BTreeMap<SlotId, Real>,
    pub w_pe_do: BTreeMap<SlotId, Real>,
    pub quadrant: Quadrant,
}

/// Aggregate over one (model, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PESummary {
    pub model_id: String,
    pub condition: String,
    pub n_items: usize,
    pub mean_s_pe_po: Real,
    pub mean_s_pe_do: Real,
    /// Pearson correlation between the PO and DO effects; absent when it is
    /// undefined (fewer than two items or a constant axis).
    pub pearson_r: Option<Real>,
    pub spearman_rho: Option<Real>,
    /// Share of items per quadrant; all four quadrants are present and the
    /// shares sum to one.
    pub quadrant_shares: BTreeMap<Quadrant, Real>,
}

fn fetch_leg<B: ScoreBackend + ?Sized>(
    backend: &B,
    item: &PrimeTargetItem,
    model_id: &str,
    leg: Leg,
) -> Result<ScoredSequence, MetricsError> {
    let wrap = |source| MetricsError::Leg { item_id: item.id.clone(), leg, source };
    let request = ScoreRequest::new(model_id, item.prime(leg.prime()), item.target(leg.target()))
        .map_err(wrap)?;
    backend.score(&request).map_err(wrap)
}

/// Sentence-level effects (PO, DO): congruent minus incongruent totals.
pub fn sentence_pe<B: ScoreBackend + ?Sized>(
    item: &PrimeTargetItem,
    model_id: &str,
    backend: &B,
) -> Result<(Real, Real), MetricsError> {
    let leg = |l| fetch_leg(backend, item, model_id, l);
    let s_pe_po =
        leg(Leg::TargetPoAfterPrimePo)?.total_logprob - leg(Leg::TargetPoAfterPrimeDo)?.total_logprob;
    let s_pe_do =
        leg(Leg::TargetDoAfterPrimeDo)?.total_logprob - leg(Leg::TargetDoAfterPrimePo)?.total_logprob;
    Ok((s_pe_po, s_pe_do))
}

/// The two legs of one structure must tokenize the target identically, or
/// the per-slot differences would compare different units.
fn require_same_tokenization(
    item: &PrimeTargetItem,
    structure: StructureLabel,
    congruent: &ScoredSequence,
    incongruent: &ScoredSequence,
) -> Result<(), MetricsError> {
    let mismatch = |detail: String| MetricsError::LegTokenization {
        item_id: item.id.clone(),
        structure,
        detail,
    };
    if congruent.tokens.len() != incongruent.tokens.len() {
        return Err(mismatch(format!(
            "{} vs {} tokens",
            congruent.tokens.len(),
            incongruent.tokens.len()
        )));
    }
    for (i, (a, b)) in congruent.tokens.iter().zip(&incongruent.tokens).enumerate() {
        if a.text != b.text || a.span != b.span {
            return Err(mismatch(format!(
                "token {i}: '{}' at {:?} vs '{}' at {:?}",
                a.text, a.span, b.text, b.span
            )));
        }
    }
    Ok(())
}

fn w_pe_for_structure(
    item: &PrimeTargetItem,
    structure: StructureLabel,
    congruent: &ScoredSequence,
    incongruent: &ScoredSequence,
) -> Result<BTreeMap<SlotId, Real>, MetricsError> {
    require_same_tokenization(item, structure, congruent, incongruent)?;
    let alignment = align(congruent, &item.target_words, structure).map_err(|source| {
        MetricsError::Align { item_id: item.id.clone(), structure, source }
    })?;
    let wrap = |source| MetricsError::Align { item_id: item.id.clone(), structure, source };
    SlotTemplate::slots(structure)
        .iter()
        .map(|&slot| {
            let c = slot_logprob(congruent, &alignment, slot).map_err(wrap)?;
            let i = slot_logprob(incongruent, &alignment, slot).map_err(wrap)?;
            Ok((slot, c - i))
        })
        .collect()
}

/// Per-slot effects (PO map, DO map) without the sentence-level bundle.
pub fn token_pe<B: ScoreBackend + ?Sized>(
    item: &PrimeTargetItem,
    model_id: &str,
    backend: &B,
) -> Result<(BTreeMap<SlotId, Real>, BTreeMap<SlotId, Real>), MetricsError> {
    let result = compute_pe(item, model_id, backend)?;
    Ok((result.w_pe_po, result.w_pe_do))
}

/// Sum of a slot-effect map over the post-divergence slots.
pub fn s_delta_pe(w_pe: &BTreeMap<SlotId, Real>) -> Real {
    w_pe.iter()
        .filter(|(slot, _)| !SlotTemplate::is_prefix_slot(**slot))
        .map(|(_, v)| v)
        .sum()
}

/// Scores all four legs and assembles the full per-item result.
pub fn compute_pe<B: ScoreBackend + ?Sized>(
    item: &PrimeTargetItem,
    model_id: &str,
    backend: &B,
) -> Result<PEResult, MetricsError> {
    let leg = |l| fetch_leg(backend, item, model_id, l);
    let po_congruent = leg(Leg::TargetPoAfterPrimePo)?;
    let po_incongruent = leg(Leg::TargetPoAfterPrimeDo)?;
    let do_congruent = leg(Leg::TargetDoAfterPrimeDo)?;
    let do_incongruent = leg(Leg::TargetDoAfterPrimePo)?;

    let w_pe_po =
        w_pe_for_structure(item, StructureLabel::PO, &po_congruent, &po_incongruent)?;
    let w_pe_do =
        w_pe_for_structure(item, StructureLabel::DO, &do_congruent, &do_incongruent)?;

    let s_pe_po = po_congruent.total_logprob - po_incongruent.total_logprob;
    let s_pe_do = do_congruent.total_logprob - do_incongruent.total_logprob;

    Ok(PEResult {
        item_id: item.id.clone(),
        model_id: model_id.to_string(),
        s_pe_po,
        s_pe_do,
        s_delta_pe_po: s_delta_pe(&w_pe_po),
        s_delta_pe_do: s_delta_pe(&w_pe_do),
        w_pe_po,
        w_pe_do,
        quadrant: classify_quadrant(s_pe_po, s_pe_do),
    })
}

/// Aggregates one (model, condition) cell. With `post_divergence_only` the
/// effects, correlations, and quadrants are recomputed from the
/// post-divergence sums instead of the full sentence effects.
pub fn summarize(
    model_id: &str,
    condition: &str,
    results: &[PEResult],
    post_divergence_only: bool,
) -> Result<PESummary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pair = |r: &PEResult| {
        if post_divergence_only {
            (r.s_delta_pe_po, r.s_delta_pe_do)
        } else {
            (r.s_pe_po, r.s_pe_do)
        }
    };
    let (pos, dos): (Vec<Real>, Vec<Real>) = results.iter().map(pair).unzip();

    let mut counts: BTreeMap<Quadrant, usize> =
        Quadrant::ALL.iter().map(|&q| (q, 0)).collect();
    for (&po, &do_) in pos.iter().zip(&dos) {
        *counts.get_mut(&classify_quadrant(po, do_)).unwrap() += 1;
    }
    let n = results.len();
    let quadrant_shares =
        counts.into_iter().map(|(q, c)| (q, c as Real / n as Real)).collect();

    Ok(PESummary {
        model_id: model_id.to_string(),
        condition: condition.to_string(),
        n_items: n,
        mean_s_pe_po: stats::mean(&pos).expect("non-empty"),
        mean_s_pe_do: stats::mean(&dos).expect("non-empty"),
        pearson_r: stats::pearson(&pos, &dos),
        spearman_rho: stats::spearman(&pos, &dos),
        quadrant_shares,
    })
}

/// Writes one result per line as JSON.
pub fn write_results(path: impl AsRef<Path>, results: &[PEResult]) -> Result<(), MetricsError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for result in results {
        serde_json::to_writer(&mut out, result).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-Lines results file written by [`write_results`].
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<PEResult>, MetricsError> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut results = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
            file: file.clone(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        results.push(result);
    }
    Ok(results)
}

/// One point of the PO-vs-DO effect scatter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterRow {
    pub item_id: String,
    pub model_id: String,
    pub condition: Condition,
    pub s_pe_po: Real,
    pub s_pe_do: Real,
    pub quadrant: Quadrant,
}

/// Writes the per-item scatter CSV; conditions are supplied alongside the
/// results because a result row does not carry its item's condition.
pub fn write_scatter_csv<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a PEResult, Condition)>,
) -> Result<(), MetricsError> {
    let mut writer = csv::Writer::from_path(path)?;
    for (result, condition) in rows {
        writer.serialize(ScatterRow {
            item_id: result.item_id.clone(),
            model_id: result.model_id.clone(),
            condition,
            s_pe_po: result.s_pe_po,
            s_pe_do: result.s_pe_do,
            quadrant: result.quadrant,
        })?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean slot effect with a normal-approximation 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WpeBarRow {
    pub model_id: String,
    pub slot: SlotId,
    pub structure: StructureLabel,
    pub mean_w_pe: Real,
    pub ci_low: Real,
    pub ci_high: Real,
}

/// Per-slot means over items, in template order: all PO slots then all DO
/// slots. With fewer than two items the interval collapses to the mean.
pub fn w_pe_bars(model_id: &str, results: &[PEResult]) -> Vec<WpeBarRow> {
    let mut rows = Vec::new();
    for structure in StructureLabel::BOTH {
        for &slot in SlotTemplate::slots(structure) {
            let values: Vec<Real> = results
                .iter()
                .filter_map(|r| {
                    let map = match structure {
                        StructureLabel::PO => &r.w_pe_po,
                        StructureLabel::DO => &r.w_pe_do,
                    };
                    map.get(&slot).copied()
                })
                .collect();
            let Some(mean) = stats::mean(&values) else { continue };
            let half = stats::sample_variance(&values)
                .map(|v| Z_975 * (v / values.len() as Real).sqrt())
                .unwrap_or(0.0);
            rows.push(WpeBarRow {
                model_id: model_id.to_string(),
                slot,
                structure,
                mean_w_pe: mean,
                ci_low: mean - half,
                ci_high: mean + half,
            });
        }
    }
    rows
}

pub fn write_bar_csv(path: impl AsRef<Path>, rows: &[WpeBarRow]) -> Result<(), MetricsError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
