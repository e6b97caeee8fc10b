//! Rejection-sampling stimulus generator.
//!
//! Each item draws candidate words constructively for its condition (copying
//! designated slots, sampling similarity partners, or sampling from disjoint
//! pools) and then accepts only if [`check_condition`] passes, so the checker
//! remains the single source of truth for condition semantics.
//!
//! Determinism: item `i` uses `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `i`, so results are independent of thread scheduling and of how
//! many items are requested.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::Real;

use super::check::{check_condition, similarity, Similarity, DEFAULT_COS_THRESHOLD};
use super::{
    AssociationNorms, Condition, CorpusError, EmbeddingTable, Lexicon, PrimeTargetItem, SlotId,
    SlotWordMap, Verb,
};

#[derive(Debug, Clone)]
pub struct GenerateParams {
    /// Rejection-sampling budget per item before giving up.
    pub attempts_per_item: usize,
    /// Cosine threshold used both for drawing similarity partners and for
    /// the acceptance check.
    pub cos_threshold: Real,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams { attempts_per_item: 10_000, cos_threshold: DEFAULT_COS_THRESHOLD }
    }
}

/// Precomputed similarity partners for the Sim* conditions.
struct SimilarityPools {
    agents: HashMap<String, Vec<String>>,
    recipients: HashMap<String, Vec<String>>,
    themes: HashMap<String, Vec<String>>,
    verbs: HashMap<String, Vec<Verb>>,
}

impl SimilarityPools {
    fn build(
        lexicon: &Lexicon,
        norms: &AssociationNorms,
        embeddings: &EmbeddingTable,
        cos_threshold: Real,
    ) -> Self {
        let noun_pool = |pool: &[String]| -> HashMap<String, Vec<String>> {
            pool.iter()
                .map(|a| {
                    let partners = pool
                        .iter()
                        .filter(|b| {
                            *b != a
                                && matches!(
                                    similarity(a, b, norms, embeddings, cos_threshold),
                                    Similarity::Similar
                                )
                        })
                        .cloned()
                        .collect();
                    (a.clone(), partners)
                })
                .collect()
        };
        let verbs = lexicon
            .verbs
            .iter()
            .map(|v| {
                let partners = lexicon
                    .verbs
                    .iter()
                    .filter(|w| {
                        w.lemma != v.lemma
                            && matches!(
                                similarity(&v.lemma, &w.lemma, norms, embeddings, cos_threshold),
                                Similarity::Similar
                            )
                    })
                    .cloned()
                    .collect();
                (v.lemma.clone(), partners)
            })
            .collect();
        SimilarityPools {
            agents: noun_pool(&lexicon.agents),
            recipients: noun_pool(&lexicon.recipients),
            themes: noun_pool(&lexicon.themes),
            verbs,
        }
    }
}

/// Generates `n_items` accepted items for one condition. Items are returned
/// in index order regardless of parallel scheduling.
pub fn generate(
    condition: Condition,
    n_items: usize,
    lexicon: &Lexicon,
    norms: &AssociationNorms,
    embeddings: &EmbeddingTable,
    seed: u64,
    params: &GenerateParams,
) -> Result<Vec<PrimeTargetItem>, CorpusError> {
    let sim = match condition {
        Condition::SimNouns | Condition::SimVerbs | Condition::SimNounsVerbs => Some(
            SimilarityPools::build(lexicon, norms, embeddings, params.cos_threshold),
        ),
        _ => None,
    };
    (0..n_items)
        .into_par_iter()
        .map(|index| {
            generate_item(condition, index, lexicon, norms, embeddings, sim.as_ref(), seed, params)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn generate_item(
    condition: Condition,
    index: usize,
    lexicon: &Lexicon,
    norms: &AssociationNorms,
    embeddings: &EmbeddingTable,
    sim: Option<&SimilarityPools>,
    seed: u64,
    params: &GenerateParams,
) -> Result<PrimeTargetItem, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    for _ in 0..params.attempts_per_item {
        let Some((prime, target)) = try_draw(condition, &mut rng, lexicon, sim) else {
            continue;
        };
        let id = format!("{}-s{}-{:05}", condition.name(), seed, index);
        let item = PrimeTargetItem::new(id, condition, prime, target)?;
        if check_condition(&item, norms, embeddings, params.cos_threshold).passed {
            return Ok(item);
        }
    }
    Err(CorpusError::Exhausted {
        condition,
        item_index: index,
        attempts: params.attempts_per_item,
    })
}

fn choose_not<'a>(
    rng: &mut ChaCha8Rng,
    pool: &'a [String],
    banned: &[&str],
) -> Option<&'a String> {
    let candidates: Vec<&String> =
        pool.iter().filter(|w| !banned.contains(&w.as_str())).collect();
    candidates.choose(rng).copied()
}

/// One constructive draw. `None` means a candidate pool was empty and the
/// attempt is abandoned (counted against the budget by the caller's loop).
fn try_draw(
    condition: Condition,
    rng: &mut ChaCha8Rng,
    lexicon: &Lexicon,
    sim: Option<&SimilarityPools>,
) -> Option<(SlotWordMap, SlotWordMap)> {
    use Condition::*;

    // verbs
    let prime_verb = lexicon.verbs.choose(rng)?;
    let target_verb: Verb = match condition {
        OverlapVerb => prime_verb.clone(),
        OverlapPrep | OverlapDetPrep => {
            let pool: Vec<&Verb> = lexicon
                .verbs_with_prep(&prime_verb.preposition)
                .filter(|v| v.lemma != prime_verb.lemma)
                .collect();
            (*pool.choose(rng)?).clone()
        }
        Core | OverlapNouns | OverlapDet => {
            let pool: Vec<&Verb> = lexicon
                .verbs
                .iter()
                .filter(|v| v.preposition != prime_verb.preposition)
                .collect();
            (*pool.choose(rng)?).clone()
        }
        SimVerbs | SimNounsVerbs => {
            sim?.verbs.get(&prime_verb.lemma)?.choose(rng)?.clone()
        }
        SimNouns => {
            let pool: Vec<&Verb> =
                lexicon.verbs.iter().filter(|v| v.lemma != prime_verb.lemma).collect();
            (*pool.choose(rng)?).clone()
        }
    };

    // determiners
    let draw_det = |rng: &mut ChaCha8Rng, pool: &[String]| pool.choose(rng).cloned();
    let prime_dets = [
        draw_det(rng, &lexicon.determiners)?,
        draw_det(rng, &lexicon.determiners)?,
        draw_det(rng, &lexicon.determiners)?,
    ];
    let target_dets: [String; 3] = match condition {
        OverlapDet | OverlapDetPrep => prime_dets.clone(),
        SimNouns | SimVerbs | SimNounsVerbs => [
            draw_det(rng, &lexicon.determiners)?,
            draw_det(rng, &lexicon.determiners)?,
            draw_det(rng, &lexicon.determiners)?,
        ],
        Core | OverlapNouns | OverlapVerb | OverlapPrep => {
            let used: Vec<&str> = prime_dets.iter().map(String::as_str).collect();
            let pool: Vec<String> = lexicon
                .determiners
                .iter()
                .filter(|d| !used.contains(&d.as_str()))
                .cloned()
                .collect();
            [
                draw_det(rng, &pool)?,
                draw_det(rng, &pool)?,
                draw_det(rng, &pool)?,
            ]
        }
    };

    // nouns: N1 agent, N2 theme, N3 recipient; agent and recipient must
    // differ within each sentence
    let prime_agent = lexicon.agents.choose(rng)?.clone();
    let prime_recipient = choose_not(rng, &lexicon.recipients, &[&prime_agent])?.clone();
    let prime_theme = lexicon.themes.choose(rng)?.clone();

    let (target_agent, target_recipient, target_theme) = match condition {
        OverlapNouns => (prime_agent.clone(), prime_recipient.clone(), prime_theme.clone()),
        SimNouns | SimNounsVerbs => {
            let pools = sim?;
            let banned = [prime_agent.as_str(), prime_recipient.as_str()];
            let agent =
                choose_not(rng, pools.agents.get(&prime_agent)?, &banned)?.clone();
            let recipient = choose_not(
                rng,
                pools.recipients.get(&prime_recipient)?,
                &[&prime_agent, &prime_recipient, &agent],
            )?
            .clone();
            let theme =
                choose_not(rng, pools.themes.get(&prime_theme)?, &[&prime_theme])?.clone();
            (agent, recipient, theme)
        }
        Core | SimVerbs | OverlapDetPrep | OverlapVerb | OverlapDet | OverlapPrep => {
            let agent =
                choose_not(rng, &lexicon.agents, &[&prime_agent, &prime_recipient])?.clone();
            let recipient = choose_not(
                rng,
                &lexicon.recipients,
                &[&prime_agent, &prime_recipient, &agent],
            )?
            .clone();
            let theme = choose_not(rng, &lexicon.themes, &[&prime_theme])?.clone();
            (agent, recipient, theme)
        }
    };

    let words = |dets: &[String; 3], agent: &str, verb: &Verb, theme: &str, recipient: &str| {
        SlotWordMap::from([
            (SlotId::DT1, dets[0].clone()),
            (SlotId::N1, agent.to_string()),
            (SlotId::V, verb.lemma.clone()),
            (SlotId::DT2, dets[1].clone()),
            (SlotId::N2, theme.to_string()),
            (SlotId::P, verb.preposition.clone()),
            (SlotId::DT3, dets[2].clone()),
            (SlotId::N3, recipient.to_string()),
        ])
    };
    let prime = words(&prime_dets, &prime_agent, prime_verb, &prime_theme, &prime_recipient);
    let target =
        words(&target_dets, &target_agent, &target_verb, &target_theme, &target_recipient);
    Some((prime, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::check_condition;
    use std::collections::BTreeSet;

    fn string_vec(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn toy_lexicon(determiners: &[&str]) -> Lexicon {
        let verbs = [
            ("gave", "to"),
            ("sent", "to"),
            ("sold", "to"),
            ("made", "for"),
            ("built", "for"),
            ("bought", "for"),
        ]
        .map(|(lemma, prep)| Verb { lemma: lemma.to_string(), preposition: prep.to_string() });
        Lexicon::new(
            string_vec(&["girl", "boy", "woman", "man", "teacher", "student"]),
            string_vec(&["nurse", "doctor", "child", "friend", "farmer", "priest"]),
            string_vec(&["ball", "book", "ring", "toy", "letter", "flower"]),
            verbs.to_vec(),
            string_vec(determiners),
        )
        .unwrap()
    }

    fn toy_norms() -> AssociationNorms {
        let pairs = [
            ("girl", "woman", 0.5),
            ("boy", "man", 0.5),
            ("teacher", "student", 0.4),
            ("nurse", "doctor", 0.4),
            ("child", "friend", 0.3),
            ("farmer", "priest", 0.2),
            ("ball", "toy", 0.6),
            ("book", "letter", 0.5),
            ("ring", "flower", 0.2),
            ("gave", "sent", 0.5),
            ("sold", "bought", 0.4),
            ("made", "built", 0.4),
        ];
        AssociationNorms::new(
            pairs.map(|(a, b, s)| (a.to_string(), b.to_string(), s)),
        )
        .unwrap()
    }

    fn toy_embeddings(lexicon: &Lexicon) -> EmbeddingTable {
        let mut words: Vec<String> = Vec::new();
        words.extend(lexicon.agents.iter().cloned());
        words.extend(lexicon.recipients.iter().cloned());
        words.extend(lexicon.themes.iter().cloned());
        words.extend(lexicon.verbs.iter().map(|v| v.lemma.clone()));
        let n = words.len();
        EmbeddingTable::new(words.into_iter().enumerate().map(|(i, w)| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            (w, v)
        }))
        .unwrap()
    }

    fn toy_setup() -> (Lexicon, AssociationNorms, EmbeddingTable) {
        let lexicon = toy_lexicon(&["the", "a", "this", "that"]);
        let norms = toy_norms();
        let embeddings = toy_embeddings(&lexicon);
        (lexicon, norms, embeddings)
    }

    #[test]
    fn every_condition_generates_items_that_pass_the_checker() {
        let (lexicon, norms, embeddings) = toy_setup();
        let params = GenerateParams::default();
        for condition in Condition::ALL {
            let items =
                generate(condition, 20, &lexicon, &norms, &embeddings, 7, &params).unwrap();
            assert_eq!(items.len(), 20);
            for item in &items {
                let chk = check_condition(&item, &norms, &embeddings, params.cos_threshold);
                assert!(chk.passed, "{condition}: {:?}", chk.violations);
                assert_eq!(item.condition, condition);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let (lexicon, norms, embeddings) = toy_setup();
        let params = GenerateParams::default();
        let a = generate(Condition::Core, 10, &lexicon, &norms, &embeddings, 42, &params).unwrap();
        let b = generate(Condition::Core, 10, &lexicon, &norms, &embeddings, 42, &params).unwrap();
        assert_eq!(a, b);
        let c = generate(Condition::Core, 10, &lexicon, &norms, &embeddings, 43, &params).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn items_are_a_prefix_stable_function_of_the_index() {
        let (lexicon, norms, embeddings) = toy_setup();
        let params = GenerateParams::default();
        let long = generate(Condition::Core, 8, &lexicon, &norms, &embeddings, 9, &params).unwrap();
        let short = generate(Condition::Core, 3, &lexicon, &norms, &embeddings, 9, &params).unwrap();
        assert_eq!(&long[..3], &short[..]);
    }

    #[test]
    fn core_with_two_determiners_splits_them_between_sentences() {
        let lexicon = toy_lexicon(&["the", "a"]);
        let norms = toy_norms();
        let embeddings = toy_embeddings(&lexicon);
        let items =
            generate(Condition::Core, 5, &lexicon, &norms, &embeddings, 3, &GenerateParams::default())
                .unwrap();
        for item in items {
            let prime_dets: BTreeSet<&String> = [SlotId::DT1, SlotId::DT2, SlotId::DT3]
                .iter()
                .map(|s| &item.prime_words[s])
                .collect();
            let target_dets: BTreeSet<&String> = [SlotId::DT1, SlotId::DT2, SlotId::DT3]
                .iter()
                .map(|s| &item.target_words[s])
                .collect();
            assert_eq!(prime_dets.len(), 1);
            assert_eq!(target_dets.len(), 1);
            assert!(prime_dets.is_disjoint(&target_dets));
            assert_ne!(
                item.prime_words[&SlotId::P], item.target_words[&SlotId::P],
                "Core requires different prepositions"
            );
        }
    }

    #[test]
    fn core_sentences_share_no_words_at_all() {
        let (lexicon, norms, embeddings) = toy_setup();
        let items =
            generate(Condition::Core, 30, &lexicon, &norms, &embeddings, 5, &GenerateParams::default())
                .unwrap();
        for item in items {
            let prime: BTreeSet<String> =
                item.prime_words.values().map(|w| w.to_lowercase()).collect();
            let target: BTreeSet<String> =
                item.target_words.values().map(|w| w.to_lowercase()).collect();
            assert!(prime.is_disjoint(&target), "{:?} vs {:?}", prime, target);
        }
    }

    #[test]
    fn overlap_verb_copies_verb_and_preposition_only() {
        let (lexicon, norms, embeddings) = toy_setup();
        let items = generate(
            Condition::OverlapVerb,
            20,
            &lexicon,
            &norms,
            &embeddings,
            11,
            &GenerateParams::default(),
        )
        .unwrap();
        for item in items {
            assert_eq!(item.prime_words[&SlotId::V], item.target_words[&SlotId::V]);
            assert_eq!(item.prime_words[&SlotId::P], item.target_words[&SlotId::P]);
            for slot in [SlotId::DT1, SlotId::N1, SlotId::DT2, SlotId::N2, SlotId::DT3, SlotId::N3]
            {
                assert_ne!(item.prime_words[&slot], item.target_words[&slot]);
            }
        }
    }

    #[test]
    fn single_determiner_lexicon_exhausts_core() {
        let lexicon = toy_lexicon(&["the"]);
        let norms = toy_norms();
        let embeddings = toy_embeddings(&lexicon);
        let params = GenerateParams { attempts_per_item: 50, ..GenerateParams::default() };
        let err = generate(Condition::Core, 1, &lexicon, &norms, &embeddings, 1, &params)
            .unwrap_err();
        match err {
            CorpusError::Exhausted { condition, item_index, attempts } => {
                assert_eq!(condition, Condition::Core);
                assert_eq!(item_index, 0);
                assert_eq!(attempts, 50);
            }
            other => panic!("expected exhaustion, got {other}"),
        }
    }

    #[test]
    fn sim_nouns_verbs_pairs_are_similar_not_identical() {
        let (lexicon, norms, embeddings) = toy_setup();
        let items = generate(
            Condition::SimNounsVerbs,
            20,
            &lexicon,
            &norms,
            &embeddings,
            13,
            &GenerateParams::default(),
        )
        .unwrap();
        for item in items {
            for slot in [SlotId::N1, SlotId::N2, SlotId::N3, SlotId::V] {
                let (p, t) = (&item.prime_words[&slot], &item.target_words[&slot]);
                assert_ne!(p, t);
                assert!(norms.strength_either(p, t) > 0.0, "{p} / {t} not norm partners");
            }
        }
    }
}
