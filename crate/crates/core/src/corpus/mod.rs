//! Stimulus corpus generation for the dative alternation.
//!
//! Items pair a prime sentence with a target sentence, each rendered in both
//! the prepositional-object (PO) and double-object (DO) structure, under one
//! of nine experimental conditions controlling lexical overlap and semantic
//! similarity between prime and target.

mod check;
mod generate;
mod lexicon;
mod resources;
mod template;

pub use check::{check_condition, similarity, ConditionCheck, Similarity, Violation, DEFAULT_COS_THRESHOLD};
pub use generate::{generate, GenerateParams};
pub use lexicon::{Lexicon, Verb};
pub use resources::{cosine, AssociationNorms, EmbeddingTable};
pub use template::{render, rendered_words, SlotId, SlotTemplate, SlotWordMap, StructureLabel};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("lexicon: {0}")]
    InvalidLexicon(String),
    #[error("norms: {0}")]
    InvalidNorms(String),
    #[error("embeddings: {0}")]
    InvalidEmbeddings(String),
    #[error("no word for slot {0}")]
    MissingSlot(SlotId),
    #[error(
        "could not satisfy {condition} for item {item_index} within {attempts} attempts; \
         the lexicon/resources are too constrained for this condition"
    )]
    Exhausted { condition: Condition, item_index: usize, attempts: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Experimental conditions. Core has no prime/target overlap of any kind;
/// Sim* conditions make designated slots semantically similar; Overlap*
/// conditions make designated slots lexically identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Core,
    SimNouns,
    SimVerbs,
    SimNounsVerbs,
    OverlapNouns,
    OverlapDetPrep,
    OverlapVerb,
    OverlapDet,
    OverlapPrep,
}

impl Condition {
    pub const ALL: [Condition; 9] = [
        Condition::Core,
        Condition::SimNouns,
        Condition::SimVerbs,
        Condition::SimNounsVerbs,
        Condition::OverlapNouns,
        Condition::OverlapDetPrep,
        Condition::OverlapVerb,
        Condition::OverlapDet,
        Condition::OverlapPrep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Core => "Core",
            Condition::SimNouns => "SimNouns",
            Condition::SimVerbs => "SimVerbs",
            Condition::SimNounsVerbs => "SimNounsVerbs",
            Condition::OverlapNouns => "OverlapNouns",
            Condition::OverlapDetPrep => "OverlapDetPrep",
            Condition::OverlapVerb => "OverlapVerb",
            Condition::OverlapDet => "OverlapDet",
            Condition::OverlapPrep => "OverlapPrep",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Condition::ALL.iter().map(|c| c.name()).collect();
                format!("unknown condition '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// One stimulus: a prime/target pair with both structural renderings.
/// Renderings are deterministic functions of the word maps; all four end
/// with " .". N2 holds the theme, N3 the recipient, so the PO and DO
/// renderings of each sentence use identical content words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimeTargetItem {
    pub id: String,
    pub condition: Condition,
    pub prime_words: SlotWordMap,
    pub target_words: SlotWordMap,
    pub prime_po: String,
    pub prime_do: String,
    pub target_po: String,
    pub target_do: String,
}

impl PrimeTargetItem {
    /// Builds the item by rendering all four sentences from the word maps.
    pub fn new(
        id: String,
        condition: Condition,
        prime_words: SlotWordMap,
        target_words: SlotWordMap,
    ) -> Result<Self, CorpusError> {
        let prime_po = render(&prime_words, StructureLabel::PO)?;
        let prime_do = render(&prime_words, StructureLabel::DO)?;
        let target_po = render(&target_words, StructureLabel::PO)?;
        let target_do = render(&target_words, StructureLabel::DO)?;
        Ok(PrimeTargetItem {
            id,
            condition,
            prime_words,
            target_words,
            prime_po,
            prime_do,
            target_po,
            target_do,
        })
    }

    pub fn prime(&self, structure: StructureLabel) -> &str {
        match structure {
            StructureLabel::PO => &self.prime_po,
            StructureLabel::DO => &self.prime_do,
        }
    }

    pub fn target(&self, structure: StructureLabel) -> &str {
        match structure {
            StructureLabel::PO => &self.target_po,
            StructureLabel::DO => &self.target_do,
        }
    }
}

/// Writes one item per line as JSON.
pub fn write_items(path: impl AsRef<Path>, items: &[PrimeTargetItem]) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-Lines corpus file written by [`write_items`].
pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<PrimeTargetItem>, CorpusError> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            file: file.clone(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_jsonl_roundtrip_preserves_slot_maps() {
        let words: SlotWordMap = [
            (SlotId::DT1, "the"),
            (SlotId::N1, "girl"),
            (SlotId::V, "gave"),
            (SlotId::DT2, "a"),
            (SlotId::N2, "ball"),
            (SlotId::P, "to"),
            (SlotId::DT3, "a"),
            (SlotId::N3, "boy"),
        ]
        .into_iter()
        .map(|(s, w)| (s, w.to_string()))
        .collect();
        let item = PrimeTargetItem::new(
            "core-000".into(),
            Condition::Core,
            words.clone(),
            words,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        write_items(&path, std::slice::from_ref(&item)).unwrap();
        let back = read_items(&path).unwrap();
        assert_eq!(back, vec![item]);
    }

    #[test]
    fn condition_parses_case_insensitively() {
        assert_eq!("overlapdetprep".parse::<Condition>().unwrap(), Condition::OverlapDetPrep);
        assert!("bogus".parse::<Condition>().is_err());
    }
}
