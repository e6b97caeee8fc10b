//! The pipeline phases behind each subcommand.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use primelens::corpus::{
    check_condition, generate, write_items, Condition, EmbeddingTable, GenerateParams,
    PrimeTargetItem, SlotTemplate,
};
use primelens::metrics::{
    compute_pe, summarize, w_pe_bars, write_bar_csv, write_results, write_scatter_csv,
    MetricsError, PEResult,
};
use primelens::prefs::{
    correlation_matrix, model_preferences, write_preferences_csv, PreferenceOrder, PrefsError,
    VerbPreference,
};
use primelens::regress::lmm::LmmOptions;
use primelens::regress::{
    bow_sentence_vectors, build_rows, fit_lmm, report_fit, sample_rows, standardize,
    write_rows_csv, FactorResources, LmmFit, RegressionRow, Response,
};
use primelens::scoring::{ScoreBackend, ScoreError};
use primelens::Real;

use crate::pipeline::{
    analysis_backend, config_error, incomplete, invariant, planned_legs, scoring_backend, Ctx,
    Failure, ModelMux,
};

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Other)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .context("serializing json")
        .map_err(Failure::Other)?;
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Other)
}

/// Generates every selected condition, re-checks each item, and writes one
/// JSONL per condition. The checker pass rate must be 100%.
pub fn cmd_generate(ctx: &Ctx) -> Result<(), Failure> {
    let (lexicon, norms, embeddings) = ctx.load_resources().map_err(Failure::Other)?;
    let corpus = &ctx.config.corpus;
    let mut params = GenerateParams::default();
    if let Some(t) = corpus.cos_threshold {
        params.cos_threshold = t;
    }
    if let Some(attempts) = corpus.attempts_per_item {
        params.attempts_per_item = attempts;
    }
    create_dir(&ctx.corpus_dir())?;

    for &condition in &ctx.conditions {
        if corpus.n_items == 0 {
            eprintln!("warning: n_items = 0, writing an empty file for {condition}");
        }
        let items = generate(
            condition,
            corpus.n_items,
            &lexicon,
            &norms,
            &embeddings,
            ctx.seed,
            &params,
        )
        .map_err(|e| Failure::Other(anyhow!(e).context(format!("generating {condition}"))))?;

        let passed = items
            .iter()
            .filter(|item| check_condition(item, &norms, &embeddings, params.cos_threshold).passed)
            .count();
        let path = ctx.corpus_path(condition);
        write_items(&path, &items)
            .map_err(|e| Failure::Other(anyhow!(e).context(format!("writing {}", path.display()))))?;
        let rate = if items.is_empty() { 100.0 } else { 100.0 * passed as f64 / items.len() as f64 };
        println!(
            "{condition}: {} items -> {} (checker {passed}/{}, {rate:.1}%)",
            items.len(),
            path.display(),
            items.len(),
        );
        if passed != items.len() {
            return Err(invariant(anyhow!(
                "{} of {} generated {condition} items fail their own condition check",
                items.len() - passed,
                items.len()
            )));
        }
    }
    write_manifest(ctx, "generate")?;
    Ok(())
}

/// Scores every leg the run needs, writing through each model's cache in
/// deterministic order. Already-cached legs are skipped, so reruns fetch
/// nothing and interrupted runs resume where they stopped.
pub fn cmd_score(ctx: &Ctx) -> Result<(), Failure> {
    let corpus = ctx.load_corpus()?;
    let mut failures = Vec::new();

    for model in &ctx.models {
        let scoring = scoring_backend(ctx, model, &corpus)?;
        let legs = planned_legs(ctx, &model.model_id, &corpus)?;
        let total = legs.len();

        let pending: Vec<_> = match &scoring.cache {
            Some(cache) => legs.into_iter().filter(|leg| !cache.contains(&leg.request)).collect(),
            None => legs,
        };
        let cached = total - pending.len();

        let backend = &scoring.backend;
        let outcomes: Vec<(usize, Result<primelens::scoring::ScoredSequence, ScoreError>)> =
            pending
                .par_iter()
                .enumerate()
                .map(|(i, leg)| (i, backend.score(&leg.request)))
                .collect();

        let mut fetched = 0usize;
        let mut failed = 0usize;
        for (i, outcome) in outcomes {
            let leg = &pending[i];
            match outcome {
                Ok(seq) => {
                    if let Some(cache) = &scoring.cache {
                        cache
                            .put(&leg.request, &seq)
                            .map_err(|e| Failure::Other(anyhow!(e).context("writing cache")))?;
                    }
                    fetched += 1;
                }
                Err(e) => {
                    failed += 1;
                    failures.push(format!(
                        "model {}, item {}, leg {}: {e}",
                        model.model_id, leg.item_id, leg.describe
                    ));
                }
            }
        }

        let persisted = if scoring.cache.is_some() { "" } else { " (not persisted; no cache configured)" };
        println!(
            "model {}: {total} legs ({fetched} fetched, {cached} cached, {failed} failed){persisted}",
            model.model_id
        );
    }

    write_manifest(ctx, "score")?;
    if !failures.is_empty() {
        for line in failures.iter().take(10) {
            eprintln!("incomplete: {line}");
        }
        return Err(incomplete(anyhow!("{} legs failed to score", failures.len())));
    }
    Ok(())
}

/// Per-model, per-condition priming-effect results plus their invariant
/// checks and plot files.
struct MetricsOutput {
    /// Keyed by model id, holding (condition, results) in condition order.
    results: BTreeMap<String, Vec<(Condition, Vec<PEResult>)>>,
}

fn compute_metrics(ctx: &Ctx, corpus: &[(Condition, Vec<PrimeTargetItem>)]) -> Result<MetricsOutput, Failure> {
    let mut results: BTreeMap<String, Vec<(Condition, Vec<PEResult>)>> = BTreeMap::new();
    let mut missing = Vec::new();

    for model in &ctx.models {
        let backend = analysis_backend(ctx, model, corpus)?;
        let model_id = model.model_id.as_str();
        let mut per_condition = Vec::new();
        for (condition, items) in corpus {
            let outcomes: Vec<Result<PEResult, MetricsError>> = items
                .par_iter()
                .map(|item| compute_pe(item, model_id, backend.as_ref()))
                .collect();
            let mut ok = Vec::with_capacity(outcomes.len());
            for outcome in outcomes {
                match outcome {
                    Ok(result) => ok.push(result),
                    Err(e) => missing.push(format!("model {model_id}: {e}")),
                }
            }
            per_condition.push((*condition, ok));
        }
        results.insert(model_id.to_string(), per_condition);
    }

    if !missing.is_empty() {
        for line in missing.iter().take(10) {
            eprintln!("incomplete: {line}");
        }
        if missing.len() > 10 {
            eprintln!("incomplete: ... and {} more", missing.len() - 10);
        }
        return Err(incomplete(anyhow!(
            "{} items could not be scored from the available backends",
            missing.len()
        )));
    }
    Ok(MetricsOutput { results })
}

/// Decomposition and prefix-antisymmetry checks every result must satisfy.
fn check_invariants(output: &MetricsOutput, tolerance: Real) -> Vec<String> {
    let mut violations = Vec::new();
    for (model_id, per_condition) in &output.results {
        for (_, results) in per_condition {
            for r in results {
                let sum_po: Real = r.w_pe_po.values().sum();
                let sum_do: Real = r.w_pe_do.values().sum();
                if (r.s_pe_po - sum_po).abs() > tolerance {
                    violations.push(format!(
                        "{model_id}/{}: PO slot effects sum to {sum_po}, sentence effect {}",
                        r.item_id, r.s_pe_po
                    ));
                }
                if (r.s_pe_do - sum_do).abs() > tolerance {
                    violations.push(format!(
                        "{model_id}/{}: DO slot effects sum to {sum_do}, sentence effect {}",
                        r.item_id, r.s_pe_do
                    ));
                }
                for &slot in SlotTemplate::SHARED_PREFIX {
                    let (po, do_) = (r.w_pe_po.get(&slot), r.w_pe_do.get(&slot));
                    if let (Some(po), Some(do_)) = (po, do_) {
                        if (po + do_).abs() > tolerance {
                            violations.push(format!(
                                "{model_id}/{}: prefix slot {slot} effects {po} and {do_} do not cancel",
                                r.item_id
                            ));
                        }
                    }
                }
            }
        }
    }
    violations
}

fn write_metrics_outputs(ctx: &Ctx, output: &MetricsOutput) -> Result<(), Failure> {
    let map_metrics = |e: MetricsError| Failure::Other(anyhow!(e));
    for (model_id, per_condition) in &output.results {
        let dir = ctx.results_dir(model_id);
        create_dir(&dir)?;
        for (condition, results) in per_condition {
            if results.is_empty() {
                continue;
            }
            let base = dir.join(condition.name());
            write_results(base.with_extension("pe.jsonl"), results).map_err(map_metrics)?;

            let summary = summarize(model_id, condition.name(), results, false)
                .map_err(map_metrics)?;
            write_json(&base.with_extension("summary.json"), &summary)?;
            if ctx.config.metrics.delta {
                let delta = summarize(model_id, condition.name(), results, true)
                    .map_err(map_metrics)?;
                write_json(&base.with_extension("delta.summary.json"), &delta)?;
            }

            write_scatter_csv(
                base.with_extension("scatter.csv"),
                results.iter().map(|r| (r, *condition)),
            )
            .map_err(map_metrics)?;
            write_bar_csv(base.with_extension("bars.csv"), &w_pe_bars(model_id, results))
                .map_err(map_metrics)?;

            println!(
                "model {model_id}, {condition}: n={} mean s-PE PO {:+.4} DO {:+.4}",
                summary.n_items, summary.mean_s_pe_po, summary.mean_s_pe_do
            );
        }
    }
    Ok(())
}

struct PrefsOutput {
    preferences: Vec<VerbPreference>,
    orders: Vec<PreferenceOrder>,
}

fn compute_prefs(ctx: &Ctx, corpus: &[(Condition, Vec<PrimeTargetItem>)]) -> Result<PrefsOutput, Failure> {
    let core_items: Vec<PrimeTargetItem> = corpus
        .iter()
        .filter(|(c, _)| *c == Condition::Core)
        .flat_map(|(_, items)| items.iter().cloned())
        .collect();
    if core_items.is_empty() {
        return Err(incomplete(anyhow!(
            "verb preferences need Core items; include Core in the run and generate it"
        )));
    }

    let mut preferences = Vec::new();
    let mut orders = Vec::new();
    for model in &ctx.models {
        let backend = analysis_backend(ctx, model, corpus)?;
        let prefs = model_preferences(&model.model_id, &core_items, backend.as_ref())
            .map_err(|e| match &e {
                PrefsError::Score { .. } => incomplete(anyhow!(e)),
                _ => Failure::Other(anyhow!(e)),
            })?;
        orders.push(PreferenceOrder::from_preferences(&model.model_id, &prefs));
        preferences.extend(prefs);
    }
    if let Some(path) = &ctx.config.prefs.human_ranks {
        let order = PreferenceOrder::from_rank_csv("human", path).map_err(config_error)?;
        orders.push(order);
    }
    Ok(PrefsOutput { preferences, orders })
}

fn write_prefs_outputs(ctx: &Ctx, output: &PrefsOutput) -> Result<(), Failure> {
    let dir = ctx.prefs_dir();
    create_dir(&dir)?;
    write_preferences_csv(dir.join("preferences.csv"), &output.preferences)
        .map_err(|e| Failure::Other(anyhow!(e)))?;

    let matrix = correlation_matrix(&output.orders).map_err(|e| match e {
        PrefsError::VerbSetMismatch { .. } => config_error(anyhow!(e)),
        other => Failure::Other(anyhow!(other)),
    })?;
    write_json(&dir.join("correlations.json"), &matrix)?;
    for (pair, rho) in &matrix {
        match rho {
            Some(rho) => println!("preference correlation {pair}: {rho:+.3}"),
            None => println!("preference correlation {pair}: undefined"),
        }
    }
    Ok(())
}

fn regression_options() -> LmmOptions {
    LmmOptions::default()
}

fn compute_regression(
    ctx: &Ctx,
    corpus: &[(Condition, Vec<PrimeTargetItem>)],
    metrics: &MetricsOutput,
    prefs: &PrefsOutput,
) -> Result<(), Failure> {
    let Some(settings) = &ctx.config.regression else {
        return Ok(());
    };
    let dir = ctx.regression_dir();
    create_dir(&dir)?;

    let items: Vec<PrimeTargetItem> =
        corpus.iter().flat_map(|(_, items)| items.iter().cloned()).collect();
    let all_results: Vec<PEResult> = metrics
        .results
        .values()
        .flat_map(|per_condition| per_condition.iter().flat_map(|(_, r)| r.iter().cloned()))
        .collect();

    let (_, _, embeddings) = ctx.load_resources().map_err(Failure::Other)?;
    let sentence_vectors = match &settings.sentence_vectors {
        Some(path) => EmbeddingTable::load(path)
            .map_err(|e| config_error(anyhow!(e).context("loading sentence vectors")))?,
        None => bow_sentence_vectors(&items, &embeddings)
            .map_err(|e| Failure::Other(anyhow!(e)))?,
    };

    let backends = ctx
        .models
        .iter()
        .map(|model| Ok((model.model_id.clone(), analysis_backend(ctx, model, corpus)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let mux = ModelMux::new(backends);
    let resources = FactorResources {
        embeddings: &embeddings,
        sentence_vectors: &sentence_vectors,
        prefs: &prefs.preferences,
        backend: &mux,
        surprisal_mode: settings.surprisal_mode,
    };
    let built = build_rows(&items, &all_results, &resources);
    if !built.rejected.is_empty() {
        println!("regression: {} rows rejected", built.rejected.len());
        for rejection in built.rejected.iter().take(5) {
            println!("  {} ({}): {}", rejection.item_id, rejection.model_id, rejection.reason);
        }
    }
    write_rows_csv(dir.join("rows.csv"), &built.rows).map_err(|e| Failure::Other(anyhow!(e)))?;

    let core_ids: HashSet<&str> = items
        .iter()
        .filter(|i| i.condition == Condition::Core)
        .map(|i| i.id.as_str())
        .collect();
    let fit_rows: Vec<RegressionRow> = match (settings.n_core, settings.n_other) {
        (None, None) => built.rows.clone(),
        (n_core, n_other) => {
            let sampled = sample_rows(
                &built.rows,
                |row| core_ids.contains(row.item_id.as_str()),
                n_core.unwrap_or(usize::MAX),
                n_other.unwrap_or(usize::MAX),
                settings.sample_seed,
            );
            let sampled: Vec<RegressionRow> = sampled.into_iter().cloned().collect();
            write_rows_csv(dir.join("sample.csv"), &sampled)
                .map_err(|e| Failure::Other(anyhow!(e)))?;
            sampled
        }
    };
    if fit_rows.is_empty() {
        return Err(incomplete(anyhow!("no regression rows survived; nothing to fit")));
    }

    let (standardized, metadata) =
        standardize(&fit_rows).map_err(|e| Failure::Other(anyhow!(e)))?;
    write_json(&dir.join("scaling.json"), &metadata)?;

    if ctx.models.len() < 2 {
        println!("regression: skipping the mixed model (needs at least two models for a random intercept)");
        return Ok(());
    }
    for response in [Response::PO, Response::DO] {
        // exactly collinear columns (the stimulus design can produce them,
        // e.g. noun-overlap flags that only ever move together) are dropped
        // one at a time until the design has full rank
        let tag = match response {
            Response::PO => "po",
            Response::DO => "do",
        };
        let mut dropped = metadata.dropped.clone();
        let fit = loop {
            match fit_lmm(&standardized, response, &dropped, &regression_options()) {
                Ok(fit) => break Some(fit),
                Err(primelens::regress::RegressError::Lmm(
                    primelens::regress::lmm::LmmError::RankDeficient { column },
                )) if !dropped.contains(&column) && column != "Intercept" => {
                    println!("regression: dropping '{column}' (aliased by earlier columns)");
                    dropped.push(column);
                }
                Err(primelens::regress::RegressError::Lmm(
                    primelens::regress::lmm::LmmError::Degenerate(reason),
                )) => {
                    // an n-gram oracle of order k only reaches k-1 tokens
                    // into the target, so its post-divergence effects can be
                    // identically zero; that is a property of the scored
                    // models, not a pipeline failure
                    println!("fit {tag}: skipped, {reason}");
                    break None;
                }
                Err(e) => {
                    return Err(Failure::Other(
                        anyhow!(e).context(format!("fitting {response:?} response")),
                    ))
                }
            }
        };
        let Some(fit) = fit else { continue };
        write_json(&dir.join(format!("fit_{tag}.json")), &fit)?;
        let table = report_fit(&fit);
        std::fs::write(dir.join(format!("fit_{tag}.txt")), &table)
            .with_context(|| "writing fit table")
            .map_err(Failure::Other)?;
        println!(
            "fit {tag}: n={} groups={} r2_marginal={:.3} converged={}",
            fit.n_obs, fit.n_groups, fit.r2_marginal, fit.converged
        );
    }
    Ok(())
}

/// Everything after scoring: priming metrics with their invariant suites,
/// verb preferences, and the mixed-model regression, all from caches.
pub fn cmd_analyze(ctx: &Ctx) -> Result<(), Failure> {
    let corpus = ctx.load_corpus()?;
    let metrics = compute_metrics(ctx, &corpus)?;
    write_metrics_outputs(ctx, &metrics)?;

    let has_core = corpus.iter().any(|(c, items)| *c == Condition::Core && !items.is_empty());
    let prefs = if has_core {
        let prefs = compute_prefs(ctx, &corpus)?;
        write_prefs_outputs(ctx, &prefs)?;
        Some(prefs)
    } else {
        println!("prefs: skipped (no Core items in this run)");
        None
    };

    if ctx.config.regression.is_some() {
        let prefs = prefs.as_ref().ok_or_else(|| {
            incomplete(anyhow!("the regression needs verb preferences; include Core in the run"))
        })?;
        compute_regression(ctx, &corpus, &metrics, prefs)?;
    }

    write_manifest(ctx, "analyze")?;

    let violations = check_invariants(&metrics, ctx.config.metrics.tolerance);
    if !violations.is_empty() {
        for line in violations.iter().take(10) {
            eprintln!("invariant: {line}");
        }
        return Err(invariant(anyhow!(
            "{} invariant violations at tolerance {}",
            violations.len(),
            ctx.config.metrics.tolerance
        )));
    }
    Ok(())
}

/// Verb preferences and their correlations only.
pub fn cmd_prefs(ctx: &Ctx) -> Result<(), Failure> {
    let corpus = ctx.load_corpus()?;
    let prefs = compute_prefs(ctx, &corpus)?;
    write_prefs_outputs(ctx, &prefs)?;
    write_manifest(ctx, "prefs")?;
    Ok(())
}

/// The regression stage only; recomputes metrics and preferences from the
/// caches rather than reading analyze's files.
pub fn cmd_regress(ctx: &Ctx) -> Result<(), Failure> {
    if ctx.config.regression.is_none() {
        return Err(config_error(anyhow!("no [regression] section in the config")));
    }
    let corpus = ctx.load_corpus()?;
    let metrics = compute_metrics(ctx, &corpus)?;
    let prefs = compute_prefs(ctx, &corpus)?;
    compute_regression(ctx, &corpus, &metrics, &prefs)?;
    write_manifest(ctx, "regress")?;
    Ok(())
}

/// Renders a text digest of the artifacts a previous analyze wrote.
pub fn cmd_report(ctx: &Ctx) -> Result<(), Failure> {
    let mut report = String::new();
    report.push_str("PRIMING SUMMARIES\n");
    let mut any = false;
    for model in &ctx.models {
        for condition in &ctx.conditions {
            let path = ctx
                .results_dir(&model.model_id)
                .join(condition.name())
                .with_extension("summary.json");
            if !path.is_file() {
                continue;
            }
            any = true;
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::Other)?;
            let summary: primelens::metrics::PESummary =
                serde_json::from_str(&text).context("parsing summary").map_err(Failure::Other)?;
            let fmt_corr = |r: Option<Real>| match r {
                Some(r) => format!("{r:+.3}"),
                None => "undefined".into(),
            };
            let balanced = summary
                .quadrant_shares
                .get(&primelens::metrics::Quadrant::Balanced)
                .copied()
                .unwrap_or(0.0);
            report.push_str(&format!(
                "{} / {}: n={} mean s-PE PO {:+.4} DO {:+.4} pearson {} spearman {} balanced {:.1}%\n",
                summary.model_id,
                summary.condition,
                summary.n_items,
                summary.mean_s_pe_po,
                summary.mean_s_pe_do,
                fmt_corr(summary.pearson_r),
                fmt_corr(summary.spearman_rho),
                100.0 * balanced,
            ));
        }
    }
    if !any {
        return Err(incomplete(anyhow!("no summaries under {} (run `analyze` first)", ctx.out.display())));
    }

    let correlations = ctx.prefs_dir().join("correlations.json");
    if correlations.is_file() {
        report.push_str("\nPREFERENCE CORRELATIONS\n");
        let text = std::fs::read_to_string(&correlations)
            .context("reading correlations")
            .map_err(Failure::Other)?;
        let matrix: BTreeMap<String, Option<Real>> =
            serde_json::from_str(&text).context("parsing correlations").map_err(Failure::Other)?;
        for (pair, rho) in &matrix {
            match rho {
                Some(rho) => report.push_str(&format!("{pair}: {rho:+.3}\n")),
                None => report.push_str(&format!("{pair}: undefined\n")),
            }
        }
    }

    for tag in ["po", "do"] {
        let path = ctx.regression_dir().join(format!("fit_{tag}.json"));
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::Other)?;
        let fit: LmmFit =
            serde_json::from_str(&text).context("parsing fit").map_err(Failure::Other)?;
        report.push_str(&format!(
            "\nMIXED MODEL ({}, n={}, groups={}, r2_marginal={:.3})\n",
            fit.response, fit.n_obs, fit.n_groups, fit.r2_marginal
        ));
        report.push_str(&report_fit(&fit));
    }

    let path = ctx.out.join("report.txt");
    std::fs::write(&path, &report)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Other)?;
    print!("{report}");
    println!("\nreport written to {}", path.display());
    Ok(())
}

/// A small run record; the timestamp is omitted in deterministic mode.
fn write_manifest(ctx: &Ctx, command: &str) -> Result<(), Failure> {
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        models: Vec<&'a str>,
        conditions: Vec<&'a str>,
        seed: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        created_unix: Option<u64>,
    }
    create_dir(&ctx.out)?;
    let created_unix = if ctx.deterministic {
        None
    } else {
        Some(
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        )
    };
    let manifest = Manifest {
        command,
        models: ctx.models.iter().map(|m| m.model_id.as_str()).collect(),
        conditions: ctx.conditions.iter().map(|c| c.name()).collect(),
        seed: ctx.seed,
        created_unix,
    };
    write_json(&ctx.out.join("run_manifest.json"), &manifest)
}
