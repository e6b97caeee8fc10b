//! Pure condition checking.
//!
//! Every constraint is re-derived from the rendered sentences plus the
//! semantic resources — never from generator bookkeeping. Words are compared
//! case-insensitively (renderings capitalize the first determiner) and the
//! sentence-final period is not a word, so it never counts as overlap.
//!
//! Constraint scope per condition, as pinned for this artifact:
//! - Core: no shared word at any slot; zero association (both directions) and
//!   sub-threshold cosine for all 16 prime x target content-word pairs.
//! - Sim*: designated slots similar (norm > 0 OR cosine >= threshold) and not
//!   identical; content words never shared; function words are free; content
//!   pairs with both endpoints non-designated must pass the Core clauses.
//! - Overlap*: shared words are exactly the designated slot words (so all
//!   non-designated slots, determiners and preposition included, differ);
//!   content pairs with both endpoints non-designated pass the Core clauses.

use std::collections::BTreeSet;
use std::fmt;

use crate::Real;

use super::{
    AssociationNorms, Condition, EmbeddingTable, PrimeTargetItem, SlotId, SlotTemplate,
    StructureLabel,
};

/// Minimum cosine treated as "similar", per the corpus design.
pub const DEFAULT_COS_THRESHOLD: Real = 0.4;

const CONTENT_SLOTS: [SlotId; 4] = [SlotId::N1, SlotId::V, SlotId::N2, SlotId::N3];

/// One constraint failure, reported against rendering-derived words.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Prime and target share a word at the same non-designated slot.
    OverlapAtSlot { slot: SlotId, word: String },
    /// Prime and target share a word across different slots.
    SharedWord { word: String, prime_slot: SlotId, target_slot: SlotId },
    /// A designated-identical slot has differing words.
    MissingDesignatedOverlap { slot: SlotId, prime: String, target: String },
    /// A designated-similar slot has identical words (overlap, not similarity).
    DesignatedIdentical { slot: SlotId, word: String },
    /// A designated-similar slot fails both the norm and cosine tests.
    NotSimilar { slot: SlotId, prime: String, target: String, cosine: Option<Real> },
    /// Non-designated content pair with non-zero association strength.
    Associated { prime_slot: SlotId, target_slot: SlotId, prime: String, target: String, strength: Real },
    /// Non-designated content pair at or above the cosine threshold.
    CosineTooHigh { prime_slot: SlotId, target_slot: SlotId, prime: String, target: String, cosine: Real },
    /// A word needed by a cosine test has no embedding; the condition is not
    /// checkable, which counts as a failure rather than a silent pass.
    MissingEmbedding { word: String },
    /// Renderings do not parse back into the slot templates consistently.
    Malformed { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OverlapAtSlot { slot, .. } => write!(f, "lexical overlap at {slot}"),
            Violation::SharedWord { word, prime_slot, target_slot } => write!(
                f,
                "lexical overlap: '{word}' at prime {prime_slot} and target {target_slot}"
            ),
            Violation::MissingDesignatedOverlap { slot, prime, target } => {
                write!(f, "expected shared word at {slot}: prime '{prime}' vs target '{target}'")
            }
            Violation::DesignatedIdentical { slot, word } => {
                write!(f, "designated similar slot {slot} repeats '{word}' (overlap, not similarity)")
            }
            Violation::NotSimilar { slot, prime, target, cosine } => match cosine {
                Some(c) => write!(
                    f,
                    "slot {slot}: '{prime}' and '{target}' not similar (norm strength 0, cosine {c:.3})"
                ),
                None => write!(f, "slot {slot}: '{prime}' and '{target}' not similar (norm strength 0)"),
            },
            Violation::Associated { prime_slot, target_slot, prime, target, strength } => write!(
                f,
                "association strength {strength:.3} between prime {prime_slot} '{prime}' and target {target_slot} '{target}'"
            ),
            Violation::CosineTooHigh { prime_slot, target_slot, prime, target, cosine } => write!(
                f,
                "cosine {cosine:.3} above threshold between prime {prime_slot} '{prime}' and target {target_slot} '{target}'"
            ),
            Violation::MissingEmbedding { word } => {
                write!(f, "no embedding for '{word}', condition not checkable")
            }
            Violation::Malformed { detail } => write!(f, "malformed item: {detail}"),
        }
    }
}

/// check_condition outcome: pass/fail plus every violation found.
#[derive(Debug, Clone)]
pub struct ConditionCheck {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

impl ConditionCheck {
    fn from(violations: Vec<Violation>) -> Self {
        ConditionCheck { passed: violations.is_empty(), violations }
    }
}

/// Semantic-similarity verdict for a word pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Similarity {
    Similar,
    Dissimilar { cosine: Option<Real> },
    /// The norm test was 0 and a cosine was required, but this word has no
    /// embedding.
    Unknown { missing: String },
}

/// Similar iff association strength > 0 in either direction OR cosine is at
/// least `cos_threshold`.
pub fn similarity(
    a: &str,
    b: &str,
    norms: &AssociationNorms,
    embeddings: &EmbeddingTable,
    cos_threshold: Real,
) -> Similarity {
    if norms.strength_either(a, b) > 0.0 {
        return Similarity::Similar;
    }
    match embeddings.cosine(a, b) {
        Some(c) if c >= cos_threshold => Similarity::Similar,
        Some(c) => Similarity::Dissimilar { cosine: Some(c) },
        None => {
            let missing = if embeddings.contains(a) { b } else { a };
            Similarity::Unknown { missing: missing.to_string() }
        }
    }
}

/// Designated slots per condition: (identical, similar).
pub(crate) fn designated_slots(condition: Condition) -> (&'static [SlotId], &'static [SlotId]) {
    use SlotId::*;
    match condition {
        Condition::Core => (&[], &[]),
        Condition::SimNouns => (&[], &[N1, N2, N3]),
        Condition::SimVerbs => (&[], &[V]),
        Condition::SimNounsVerbs => (&[], &[N1, N2, N3, V]),
        Condition::OverlapNouns => (&[N1, N2, N3], &[]),
        Condition::OverlapDetPrep => (&[DT1, DT2, DT3, P], &[]),
        Condition::OverlapVerb => (&[V, P], &[]),
        Condition::OverlapDet => (&[DT1, DT2, DT3], &[]),
        Condition::OverlapPrep => (&[P], &[]),
    }
}

/// Lowercased slot words recovered from one structure's rendering.
fn recover(rendering: &str, structure: StructureLabel) -> Result<Vec<(SlotId, String)>, String> {
    let template = SlotTemplate::slots(structure);
    let tokens: Vec<&str> = rendering.split_whitespace().collect();
    if tokens.len() != template.len() {
        return Err(format!(
            "{structure} rendering '{rendering}' has {} tokens, template needs {}",
            tokens.len(),
            template.len()
        ));
    }
    if *tokens.last().unwrap() != "." {
        return Err(format!("{structure} rendering '{rendering}' does not end with ' .'"));
    }
    Ok(template
        .iter()
        .zip(&tokens)
        .filter(|(slot, _)| **slot != SlotId::END)
        .map(|(slot, tok)| (*slot, tok.to_lowercase()))
        .collect())
}

/// Recovers the 8-slot word assignment of one sentence from its PO and DO
/// renderings, verifying the two agree on every shared slot.
fn recover_sentence(
    label: &str,
    po: &str,
    do_: &str,
) -> Result<Vec<(SlotId, String)>, Vec<Violation>> {
    let map_err = |e: String| vec![Violation::Malformed { detail: format!("{label}: {e}") }];
    let po_words = recover(po, StructureLabel::PO).map_err(map_err)?;
    let do_words = recover(do_, StructureLabel::DO).map_err(map_err)?;
    let mut violations = Vec::new();
    for (slot, word) in &do_words {
        let po_word = po_words.iter().find(|(s, _)| s == slot).map(|(_, w)| w);
        if po_word != Some(word) {
            violations.push(Violation::Malformed {
                detail: format!(
                    "{label}: PO and DO renderings disagree at {slot} ('{}' vs '{word}')",
                    po_word.cloned().unwrap_or_default()
                ),
            });
        }
    }
    if violations.is_empty() {
        Ok(po_words)
    } else {
        Err(violations)
    }
}

fn word_at(words: &[(SlotId, String)], slot: SlotId) -> &str {
    &words.iter().find(|(s, _)| *s == slot).expect("slot present").1
}

/// Re-derives every constraint of `item.condition` from the renderings.
pub fn check_condition(
    item: &PrimeTargetItem,
    norms: &AssociationNorms,
    embeddings: &EmbeddingTable,
    cos_threshold: Real,
) -> ConditionCheck {
    let prime = match recover_sentence("prime", &item.prime_po, &item.prime_do) {
        Ok(w) => w,
        Err(v) => return ConditionCheck::from(v),
    };
    let target = match recover_sentence("target", &item.target_po, &item.target_do) {
        Ok(w) => w,
        Err(v) => return ConditionCheck::from(v),
    };

    let (identical, similar) = designated_slots(item.condition);
    let sim_condition = !similar.is_empty();
    let mut violations = Vec::new();

    // designated identity
    for &slot in identical {
        let (pw, tw) = (word_at(&prime, slot), word_at(&target, slot));
        if pw != tw {
            violations.push(Violation::MissingDesignatedOverlap {
                slot,
                prime: pw.to_string(),
                target: tw.to_string(),
            });
        }
    }

    // designated similarity
    for &slot in similar {
        let (pw, tw) = (word_at(&prime, slot), word_at(&target, slot));
        if pw == tw {
            violations.push(Violation::DesignatedIdentical { slot, word: pw.to_string() });
            continue;
        }
        match similarity(pw, tw, norms, embeddings, cos_threshold) {
            Similarity::Similar => {}
            Similarity::Dissimilar { cosine } => violations.push(Violation::NotSimilar {
                slot,
                prime: pw.to_string(),
                target: tw.to_string(),
                cosine,
            }),
            Similarity::Unknown { missing } => {
                violations.push(Violation::MissingEmbedding { word: missing })
            }
        }
    }

    // overlap scan; Sim* conditions constrain content slots only
    for (ps, pw) in &prime {
        for (ts, tw) in &target {
            if sim_condition
                && !(CONTENT_SLOTS.contains(ps) && CONTENT_SLOTS.contains(ts))
            {
                continue;
            }
            if pw != tw {
                continue;
            }
            let expected = ps == ts && identical.contains(ps);
            if expected {
                continue;
            }
            if ps == ts {
                violations.push(Violation::OverlapAtSlot { slot: *ps, word: pw.clone() });
            } else {
                violations.push(Violation::SharedWord {
                    word: pw.clone(),
                    prime_slot: *ps,
                    target_slot: *ts,
                });
            }
        }
    }

    // association/cosine clauses on non-designated content pairs
    let designated_content: Vec<SlotId> = CONTENT_SLOTS
        .iter()
        .copied()
        .filter(|s| identical.contains(s) || similar.contains(s))
        .collect();
    let free_content: Vec<SlotId> = CONTENT_SLOTS
        .iter()
        .copied()
        .filter(|s| !designated_content.contains(s))
        .collect();
    let mut missing_embeddings = BTreeSet::new();
    for &ps in &free_content {
        for &ts in &free_content {
            let (pw, tw) = (word_at(&prime, ps), word_at(&target, ts));
            let strength = norms.strength_either(pw, tw);
            if strength > 0.0 {
                violations.push(Violation::Associated {
                    prime_slot: ps,
                    target_slot: ts,
                    prime: pw.to_string(),
                    target: tw.to_string(),
                    strength,
                });
            }
            match embeddings.cosine(pw, tw) {
                Some(c) if c >= cos_threshold => violations.push(Violation::CosineTooHigh {
                    prime_slot: ps,
                    target_slot: ts,
                    prime: pw.to_string(),
                    target: tw.to_string(),
                    cosine: c,
                }),
                Some(_) => {}
                None => {
                    for w in [pw, tw] {
                        if !embeddings.contains(w) {
                            missing_embeddings.insert(w.to_string());
                        }
                    }
                }
            }
        }
    }
    violations.extend(
        missing_embeddings
            .into_iter()
            .map(|word| Violation::MissingEmbedding { word }),
    );

    ConditionCheck::from(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SlotWordMap;

    fn words(entries: [(&str, &str); 8]) -> SlotWordMap {
        use SlotId::*;
        let slots = [DT1, N1, V, DT2, N2, P, DT3, N3];
        slots
            .iter()
            .zip(entries)
            .map(|(slot, (_, w))| (*slot, w.to_string()))
            .collect()
    }

    fn item(condition: Condition, prime: [(&str, &str); 8], target: [(&str, &str); 8]) -> PrimeTargetItem {
        PrimeTargetItem::new("t-0".into(), condition, words(prime), words(target)).unwrap()
    }

    fn one_hot_embeddings(ws: &[&str]) -> EmbeddingTable {
        let n = ws.len();
        EmbeddingTable::new(ws.iter().enumerate().map(|(i, w)| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            (w.to_string(), v)
        }))
        .unwrap()
    }

    const CONTENT: [&str; 8] = ["girl", "gave", "ball", "nurse", "boy", "sent", "book", "child"];

    fn core_pair() -> PrimeTargetItem {
        item(
            Condition::Core,
            [("DT1", "the"), ("N1", "girl"), ("V", "gave"), ("DT2", "the"), ("N2", "ball"), ("P", "to"), ("DT3", "the"), ("N3", "nurse")],
            [("DT1", "a"), ("N1", "boy"), ("V", "sent"), ("DT2", "a"), ("N2", "book"), ("P", "for"), ("DT3", "a"), ("N3", "child")],
        )
    }

    #[test]
    fn clean_core_item_passes() {
        let chk = check_condition(&core_pair(), &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(chk.passed, "violations: {:?}", chk.violations);
    }

    #[test]
    fn same_slot_overlap_under_core_reports_the_slot() {
        let mut it = core_pair();
        it.target_words.insert(SlotId::N1, "girl".into());
        let it = PrimeTargetItem::new(it.id, it.condition, it.prime_words, it.target_words).unwrap();
        let chk = check_condition(&it, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(!chk.passed);
        assert!(
            chk.violations.iter().any(|v| v.to_string() == "lexical overlap at N1"),
            "violations: {:?}",
            chk.violations
        );
    }

    #[test]
    fn core_flags_shared_function_words_across_slots() {
        let mut it = core_pair();
        it.target_words.insert(SlotId::DT2, "the".into()); // prime uses "the" everywhere
        let it = PrimeTargetItem::new(it.id, it.condition, it.prime_words, it.target_words).unwrap();
        let chk = check_condition(&it, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(!chk.passed);
        assert!(matches!(
            chk.violations[0],
            Violation::OverlapAtSlot { slot: SlotId::DT2, .. } | Violation::SharedWord { .. }
        ));
    }

    #[test]
    fn sim_verbs_passes_on_norm_strength() {
        let norms = AssociationNorms::new([("gave".to_string(), "sent".to_string(), 0.3)]).unwrap();
        let it = item(
            Condition::SimVerbs,
            [("DT1", "the"), ("N1", "girl"), ("V", "gave"), ("DT2", "the"), ("N2", "ball"), ("P", "to"), ("DT3", "the"), ("N3", "nurse")],
            [("DT1", "the"), ("N1", "boy"), ("V", "sent"), ("DT2", "the"), ("N2", "book"), ("P", "to"), ("DT3", "the"), ("N3", "child")],
        );
        let chk = check_condition(&it, &norms, &one_hot_embeddings(&CONTENT), 0.4);
        assert!(chk.passed, "violations: {:?}", chk.violations);
    }

    #[test]
    fn sim_verbs_fails_when_verbs_are_unrelated() {
        let it = item(
            Condition::SimVerbs,
            [("DT1", "the"), ("N1", "girl"), ("V", "gave"), ("DT2", "the"), ("N2", "ball"), ("P", "to"), ("DT3", "the"), ("N3", "nurse")],
            [("DT1", "the"), ("N1", "boy"), ("V", "sent"), ("DT2", "the"), ("N2", "book"), ("P", "to"), ("DT3", "the"), ("N3", "child")],
        );
        let chk = check_condition(&it, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(chk.violations.iter().any(|v| matches!(v, Violation::NotSimilar { slot: SlotId::V, .. })));
    }

    #[test]
    fn core_fails_on_cosine_at_threshold() {
        // two unit vectors at 60 degrees: cosine exactly 0.5
        let mut vecs: Vec<(String, Vec<f64>)> = CONTENT
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut v = vec![0.0; CONTENT.len() + 2];
                v[i + 2] = 1.0;
                (w.to_string(), v)
            })
            .collect();
        vecs.retain(|(w, _)| w != "ball" && w != "book");
        vecs.push(("ball".to_string(), { let mut v = vec![0.0; CONTENT.len() + 2]; v[0] = 1.0; v }));
        vecs.push(("book".to_string(), { let mut v = vec![0.0; CONTENT.len() + 2]; v[0] = 0.5; v[1] = 3f64.sqrt() / 2.0; v }));
        let emb = EmbeddingTable::new(vecs).unwrap();
        let chk = check_condition(&core_pair(), &AssociationNorms::default(), &emb, 0.4);
        assert!(!chk.passed);
        assert!(chk.violations.iter().any(|v| matches!(
            v,
            Violation::CosineTooHigh { prime_slot: SlotId::N2, target_slot: SlotId::N2, .. }
        )));
    }

    #[test]
    fn missing_embedding_is_a_checkability_violation() {
        let emb = one_hot_embeddings(&["girl", "gave", "ball", "nurse", "boy", "sent", "book"]);
        let chk = check_condition(&core_pair(), &AssociationNorms::default(), &emb, 0.4);
        assert!(!chk.passed);
        assert!(chk
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MissingEmbedding { word } if word == "child")));
    }

    #[test]
    fn overlap_verb_requires_shared_verb_and_preposition() {
        let it = item(
            Condition::OverlapVerb,
            [("DT1", "the"), ("N1", "girl"), ("V", "gave"), ("DT2", "the"), ("N2", "ball"), ("P", "to"), ("DT3", "the"), ("N3", "nurse")],
            [("DT1", "a"), ("N1", "boy"), ("V", "gave"), ("DT2", "a"), ("N2", "book"), ("P", "to"), ("DT3", "a"), ("N3", "child")],
        );
        let chk = check_condition(&it, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(chk.passed, "violations: {:?}", chk.violations);

        // same verb, different preposition: designated P overlap missing
        let bad = item(
            Condition::OverlapVerb,
            [("DT1", "the"), ("N1", "girl"), ("V", "gave"), ("DT2", "the"), ("N2", "ball"), ("P", "to"), ("DT3", "the"), ("N3", "nurse")],
            [("DT1", "a"), ("N1", "boy"), ("V", "gave"), ("DT2", "a"), ("N2", "book"), ("P", "for"), ("DT3", "a"), ("N3", "child")],
        );
        let chk = check_condition(&bad, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(chk
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MissingDesignatedOverlap { slot: SlotId::P, .. })));
    }

    #[test]
    fn overlap_det_forbids_preposition_overlap() {
        let it = item(
            Condition::OverlapDet,
            [("DT1", "the"), ("N1", "girl"), ("V", "gave"), ("DT2", "the"), ("N2", "ball"), ("P", "to"), ("DT3", "the"), ("N3", "nurse")],
            [("DT1", "the"), ("N1", "boy"), ("V", "sent"), ("DT2", "the"), ("N2", "book"), ("P", "to"), ("DT3", "the"), ("N3", "child")],
        );
        let chk = check_condition(&it, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(chk
            .violations
            .iter()
            .any(|v| matches!(v, Violation::OverlapAtSlot { slot: SlotId::P, .. })));
    }

    #[test]
    fn malformed_rendering_is_reported() {
        let mut it = core_pair();
        it.target_po = "not a dative".into();
        let chk = check_condition(&it, &AssociationNorms::default(), &one_hot_embeddings(&CONTENT), 0.4);
        assert!(!chk.passed);
        assert!(matches!(chk.violations[0], Violation::Malformed { .. }));
    }
}
