//! Constructed backends with closed-form priming behavior, used to validate
//! the metrics pipeline end to end.

use crate::corpus::StructureLabel;
use crate::Real;

use super::{ScoreBackend, ScoreError, ScoreRequest, ScoredSequence};

/// Wraps a backend and adds `gamma` nats to the final token's logprob
/// whenever context and continuation carry the same dative structure.
///
/// Over a context-blind inner backend (a unigram model), every priming
/// effect is exactly `gamma` on the congruent leg and 0 elsewhere, with the
/// whole boost landing on the sentence-final slot; this makes mean s-PE,
/// the w-PE decomposition, and the quadrant classifier all checkable in
/// closed form.
pub struct GammaCongruenceOracle<B> {
    inner: B,
    gamma: Real,
    prepositions: Vec<String>,
    backend_id: String,
}

impl<B: ScoreBackend> GammaCongruenceOracle<B> {
    pub fn new(inner: B, gamma: Real) -> Self {
        Self::with_prepositions(inner, gamma, ["to", "for"])
    }

    /// The structure detector needs the closed set of prepositions used by
    /// the corpus lexicon.
    pub fn with_prepositions(
        inner: B,
        gamma: Real,
        prepositions: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        let backend_id = format!("{}+gamma", inner.backend_id());
        GammaCongruenceOracle {
            inner,
            gamma,
            prepositions: prepositions.into_iter().map(Into::into).collect(),
            backend_id,
        }
    }

    /// PO sentences place the preposition before the final determiner-noun
    /// pair: ["...", P, DT3, N3, "."]. DO sentences have no preposition.
    fn structure_of(&self, sentence: &str) -> Option<StructureLabel> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        if words.len() < 4 {
            return None;
        }
        let candidate = words[words.len() - 4].to_lowercase();
        if self.prepositions.iter().any(|p| *p == candidate) {
            Some(StructureLabel::PO)
        } else {
            Some(StructureLabel::DO)
        }
    }

    fn congruent(&self, request: &ScoreRequest) -> bool {
        if request.context.is_empty() {
            return false;
        }
        match (self.structure_of(&request.context), self.structure_of(&request.continuation)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }
}

impl<B: ScoreBackend> ScoreBackend for GammaCongruenceOracle<B> {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        let mut seq = self.inner.score(request)?;
        if self.congruent(request) {
            let last = seq.tokens.last_mut().expect("validated sequences are non-empty");
            last.logprob += self.gamma;
            seq.total_logprob = seq.tokens.iter().map(|t| t.logprob).sum();
            seq.backend_id = self.backend_id.clone();
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{train_ngram, NGramOptions, UnkMode};
    use approx::assert_abs_diff_eq;

    const PO: &str = "The girl gave the ball to the boy .";
    const DO: &str = "The girl gave the boy the ball .";

    fn oracle() -> GammaCongruenceOracle<crate::scoring::NGramModel> {
        let unigram = train_ngram(
            [PO],
            NGramOptions { order: 1, weights: vec![1.0], context_window: 32, unk_mode: UnkMode::Error },
        )
        .unwrap();
        GammaCongruenceOracle::new(unigram, 0.7)
    }

    #[test]
    fn detects_structures_from_renderings() {
        let o = oracle();
        assert_eq!(o.structure_of(PO), Some(StructureLabel::PO));
        assert_eq!(o.structure_of(DO), Some(StructureLabel::DO));
    }

    #[test]
    fn congruent_leg_gains_exactly_gamma_on_the_final_token() {
        let o = oracle();
        let congruent = ScoreRequest::new("m", PO, PO).unwrap();
        let incongruent = ScoreRequest::new("m", DO, PO).unwrap();
        let boosted = o.score(&congruent).unwrap();
        let plain = o.score(&incongruent).unwrap();
        assert_abs_diff_eq!(boosted.total_logprob - plain.total_logprob, 0.7, epsilon = 1e-12);
        for (b, p) in boosted.tokens.iter().zip(&plain.tokens).rev().skip(1) {
            assert_eq!(b.logprob, p.logprob);
        }
    }

    #[test]
    fn unconditioned_requests_are_never_boosted() {
        let o = oracle();
        let bare = ScoreRequest::unconditioned("m", PO).unwrap();
        let via_incongruent = ScoreRequest::new("m", DO, PO).unwrap();
        assert_eq!(
            o.score(&bare).unwrap().total_logprob,
            o.score(&via_incongruent).unwrap().total_logprob
        );
    }
}
