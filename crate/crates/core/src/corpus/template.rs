//! Slot templates for the dative alternation and deterministic sentence
//! rendering.
//!
//! Both structures share the four-slot prefix [DT1, N1, V, DT2] and diverge
//! at slot index 4: the prepositional-object order continues theme-prep-
//! recipient, the double-object order continues recipient-theme.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use super::CorpusError;

/// The two dative structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureLabel {
    /// Prepositional object: "The girl gave the ball to the boy ."
    PO,
    /// Double object: "The girl gave the boy the ball ."
    DO,
}

impl StructureLabel {
    pub const BOTH: [StructureLabel; 2] = [StructureLabel::PO, StructureLabel::DO];
}

impl fmt::Display for StructureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StructureLabel::PO => "PO",
            StructureLabel::DO => "DO",
        })
    }
}

/// Syntactic word slots. N2 is the theme noun, N3 the recipient noun; END is
/// the sentence-final period. Declaration order is the PO surface order,
/// which also fixes the key order of serialized slot maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotId {
    DT1,
    N1,
    V,
    DT2,
    N2,
    P,
    DT3,
    N3,
    END,
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SlotId::DT1 => "DT1",
            SlotId::N1 => "N1",
            SlotId::V => "V",
            SlotId::DT2 => "DT2",
            SlotId::N2 => "N2",
            SlotId::P => "P",
            SlotId::DT3 => "DT3",
            SlotId::N3 => "N3",
            SlotId::END => "END",
        };
        f.write_str(s)
    }
}

/// Word assignment for the lexical slots of one sentence pair. END is
/// implicit (always "."); P is used only by the PO rendering but is part of
/// every item's map.
pub type SlotWordMap = BTreeMap<SlotId, String>;

/// Slot orderings for both structures.
pub struct SlotTemplate;

impl SlotTemplate {
    pub const PO: &'static [SlotId] = &[
        SlotId::DT1,
        SlotId::N1,
        SlotId::V,
        SlotId::DT2,
        SlotId::N2,
        SlotId::P,
        SlotId::DT3,
        SlotId::N3,
        SlotId::END,
    ];
    pub const DO: &'static [SlotId] = &[
        SlotId::DT1,
        SlotId::N1,
        SlotId::V,
        SlotId::DT2,
        SlotId::N3,
        SlotId::DT3,
        SlotId::N2,
        SlotId::END,
    ];
    /// Slots shared by both orders before the structures diverge.
    pub const SHARED_PREFIX: &'static [SlotId] = &[SlotId::DT1, SlotId::N1, SlotId::V, SlotId::DT2];
    /// 0-based slot index where PO and DO word orders diverge.
    pub const DIVERGENCE_INDEX: usize = 4;

    pub fn slots(structure: StructureLabel) -> &'static [SlotId] {
        match structure {
            StructureLabel::PO => Self::PO,
            StructureLabel::DO => Self::DO,
        }
    }

    /// Slots strictly after the shared prefix, in surface order.
    pub fn post_divergence(structure: StructureLabel) -> &'static [SlotId] {
        &Self::slots(structure)[Self::DIVERGENCE_INDEX..]
    }

    /// True when `slot` is part of the shared four-word prefix.
    pub fn is_prefix_slot(slot: SlotId) -> bool {
        Self::SHARED_PREFIX.contains(&slot)
    }
}

/// Surface word for each slot of `structure`, in order: fills END with ".",
/// capitalizes the sentence-initial determiner.
pub fn rendered_words(
    words: &SlotWordMap,
    structure: StructureLabel,
) -> Result<Vec<(SlotId, String)>, CorpusError> {
    let mut out = Vec::with_capacity(SlotTemplate::slots(structure).len());
    for (i, &slot) in SlotTemplate::slots(structure).iter().enumerate() {
        let word = if slot == SlotId::END {
            ".".to_string()
        } else {
            words
                .get(&slot)
                .ok_or(CorpusError::MissingSlot(slot))?
                .clone()
        };
        let word = if i == 0 { capitalize(&word) } else { word };
        out.push((slot, word));
    }
    Ok(out)
}

/// Renders the sentence string: words joined by single spaces, ending " .".
pub fn render(words: &SlotWordMap, structure: StructureLabel) -> Result<String, CorpusError> {
    let parts = rendered_words(words, structure)?;
    let mut s = String::new();
    for (i, (_, w)) in parts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(w);
    }
    Ok(s)
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn girl_gave_ball_boy() -> SlotWordMap {
        [
            (SlotId::DT1, "the"),
            (SlotId::N1, "girl"),
            (SlotId::V, "gave"),
            (SlotId::DT2, "the"),
            (SlotId::N2, "ball"),
            (SlotId::P, "to"),
            (SlotId::DT3, "the"),
            (SlotId::N3, "boy"),
        ]
        .into_iter()
        .map(|(s, w)| (s, w.to_string()))
        .collect()
    }

    #[test]
    fn renders_po_order() {
        let words = girl_gave_ball_boy();
        assert_eq!(
            render(&words, StructureLabel::PO).unwrap(),
            "The girl gave the ball to the boy ."
        );
    }

    #[test]
    fn renders_do_order() {
        let words = girl_gave_ball_boy();
        assert_eq!(
            render(&words, StructureLabel::DO).unwrap(),
            "The girl gave the boy the ball ."
        );
    }

    #[test]
    fn missing_slot_is_an_error() {
        let mut words = girl_gave_ball_boy();
        words.remove(&SlotId::N3);
        match render(&words, StructureLabel::PO) {
            Err(CorpusError::MissingSlot(SlotId::N3)) => {}
            other => panic!("expected MissingSlot(N3), got {other:?}"),
        }
    }

    #[test]
    fn templates_share_the_four_word_prefix() {
        assert_eq!(&SlotTemplate::PO[..4], SlotTemplate::SHARED_PREFIX);
        assert_eq!(&SlotTemplate::DO[..4], SlotTemplate::SHARED_PREFIX);
        assert_eq!(SlotTemplate::DIVERGENCE_INDEX, 4);
        assert_eq!(SlotTemplate::post_divergence(StructureLabel::PO)[0], SlotId::N2);
        assert_eq!(SlotTemplate::post_divergence(StructureLabel::DO)[0], SlotId::N3);
    }
}
