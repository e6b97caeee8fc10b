//! Subword-token to word-slot alignment.
//!
//! Backends tokenize however they like; metrics need per-slot sums. Each
//! scored token is assigned to the slot whose word's character span contains
//! the token's span midpoint, so multi-token words aggregate onto their slot
//! and the per-slot sums always partition the sequence total. Like token
//! spans, slot spans carry inter-word whitespace on the following slot.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::corpus::{rendered_words, CorpusError, SlotId, SlotWordMap, StructureLabel};
use crate::scoring::ScoredSequence;
use crate::Real;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("tokens diverge from the rendering at byte {offset}: {detail}")]
    Mismatch { offset: usize, detail: String },
    #[error("no token's midpoint falls in slot {0}")]
    EmptySlot(SlotId),
    #[error("slot {0} is not part of this alignment")]
    UnknownSlot(SlotId),
    #[error(transparent)]
    Render(#[from] CorpusError),
}

/// Assignment of token index ranges to template slots, in template order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotAlignment {
    slot_spans: Vec<(SlotId, Range<usize>)>,
    n_tokens: usize,
}

impl SlotAlignment {
    pub fn slots(&self) -> impl Iterator<Item = (SlotId, &Range<usize>)> {
        self.slot_spans.iter().map(|(s, r)| (*s, r))
    }

    pub fn token_range(&self, slot: SlotId) -> Option<&Range<usize>> {
        self.slot_spans.iter().find(|(s, _)| *s == slot).map(|(_, r)| r)
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }
}

impl fmt::Display for SlotAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .slot_spans
            .iter()
            .map(|(s, r)| format!("{s}:[{},{})", r.start, r.end))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Two whitespace-insensitive views of a string: `c` yields non-whitespace
/// bytes with their offsets, runs of whitespace collapse to one ' '.
fn normalized(text: &str) -> Vec<(usize, u8)> {
    let mut out = Vec::with_capacity(text.len());
    let mut in_ws = false;
    for (i, b) in text.bytes().enumerate() {
        if b.is_ascii_whitespace() {
            if !in_ws && !out.is_empty() {
                out.push((i, b' '));
            }
            in_ws = true;
        } else {
            out.push((i, b));
            in_ws = false;
        }
    }
    while matches!(out.last(), Some((_, b' '))) {
        out.pop();
    }
    out
}

/// Aligns a scored sequence of the rendering of (words, structure) onto the
/// template's slots.
pub fn align(
    scored: &ScoredSequence,
    words: &SlotWordMap,
    structure: StructureLabel,
) -> Result<SlotAlignment, AlignError> {
    let surface = rendered_words(words, structure)?;
    let rendering: String =
        surface.iter().map(|(_, w)| w.as_str()).collect::<Vec<_>>().join(" ");

    // reconcile token texts with the rendering, whitespace-normalized
    let concat: String = scored.tokens.iter().map(|t| t.text.as_str()).collect();
    let got = normalized(&concat);
    let want = normalized(&rendering);
    for (i, (a, b)) in got.iter().zip(&want).enumerate() {
        if a.1 != b.1 {
            return Err(AlignError::Mismatch {
                offset: a.0,
                detail: format!(
                    "'{}' where the rendering has '{}' (position {i} ignoring whitespace)",
                    a.1 as char, b.1 as char
                ),
            });
        }
    }
    if got.len() != want.len() {
        let offset = got.get(want.len()).map(|(o, _)| *o).unwrap_or(concat.len());
        return Err(AlignError::Mismatch {
            offset,
            detail: format!(
                "token text has {} significant bytes, the rendering has {}",
                got.len(),
                want.len()
            ),
        });
    }

    // slot character spans over the rendering, whitespace on the next slot
    let mut slot_char_spans: Vec<(SlotId, Range<usize>)> = Vec::with_capacity(surface.len());
    let mut word_start = 0usize;
    for (i, (slot, word)) in surface.iter().enumerate() {
        let span_start = if i == 0 { 0 } else { word_start };
        let word_end = word_start + word.len();
        let span_end = if i + 1 == surface.len() { rendering.len() } else { word_end };
        slot_char_spans.push((*slot, span_start..span_end));
        word_start = word_end + 1;
    }

    // token spans should tile the rendering; trust them only after checking
    let mut cursor = 0usize;
    for tok in &scored.tokens {
        if tok.span.0 != cursor {
            return Err(AlignError::Mismatch {
                offset: cursor,
                detail: format!("token '{}' starts at {}, expected {cursor}", tok.text, tok.span.0),
            });
        }
        cursor = tok.span.1;
    }
    if cursor != rendering.len() {
        return Err(AlignError::Mismatch {
            offset: cursor,
            detail: format!("tokens cover {cursor} of {} rendering bytes", rendering.len()),
        });
    }

    // midpoint rule, on doubled coordinates to stay in integers
    let mut slot_spans: Vec<(SlotId, Range<usize>)> = Vec::with_capacity(slot_char_spans.len());
    let mut slot_idx = 0usize;
    for (t, tok) in scored.tokens.iter().enumerate() {
        let mid2 = tok.span.0 + tok.span.1;
        while slot_idx < slot_char_spans.len() && mid2 >= 2 * slot_char_spans[slot_idx].1.end {
            slot_idx += 1;
        }
        if slot_idx == slot_char_spans.len() {
            return Err(AlignError::Mismatch {
                offset: tok.span.0,
                detail: format!("token '{}' lies past the final slot", tok.text),
            });
        }
        let slot = slot_char_spans[slot_idx].0;
        match slot_spans.last_mut() {
            Some((s, range)) if *s == slot => range.end = t + 1,
            _ => slot_spans.push((slot, t..t + 1)),
        }
    }

    // every template slot must have received at least one token
    for (slot, _) in &slot_char_spans {
        if !slot_spans.iter().any(|(s, _)| s == slot) {
            return Err(AlignError::EmptySlot(*slot));
        }
    }

    Ok(SlotAlignment { slot_spans, n_tokens: scored.tokens.len() })
}

/// Sum of token logprobs over the slot's token range.
pub fn slot_logprob(
    scored: &ScoredSequence,
    alignment: &SlotAlignment,
    slot: SlotId,
) -> Result<Real, AlignError> {
    let range = alignment.token_range(slot).ok_or(AlignError::UnknownSlot(slot))?;
    Ok(scored.tokens[range.clone()].iter().map(|t| t.logprob).sum())
}
