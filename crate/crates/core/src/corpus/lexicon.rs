//! Lexicon loading and validation.
//!
//! File format: sectioned UTF-8 TSV. Section headers are `#agents`,
//! `#recipients`, `#themes`, `#verbs`, `#determiners`; verb rows are
//! `lemma<TAB>preposition`, all other rows a single lemma. Lines starting
//! with `#!` are comments.

use std::collections::HashSet;
use std::path::Path;

use super::CorpusError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verb {
    pub lemma: String,
    pub preposition: String,
}

/// Word pools for stimulus generation. Agents and recipients are animate,
/// themes inanimate; the same lemma may appear in both animate pools but
/// never in an animate and the inanimate pool at once.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub agents: Vec<String>,
    pub recipients: Vec<String>,
    pub themes: Vec<String>,
    pub verbs: Vec<Verb>,
    pub determiners: Vec<String>,
}

impl Lexicon {
    pub fn new(
        agents: Vec<String>,
        recipients: Vec<String>,
        themes: Vec<String>,
        verbs: Vec<Verb>,
        determiners: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let lex = Lexicon { agents, recipients, themes, verbs, determiners };
        lex.validate()?;
        Ok(lex)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        for (name, list) in [
            ("agents", &self.agents),
            ("recipients", &self.recipients),
            ("themes", &self.themes),
            ("determiners", &self.determiners),
        ] {
            if list.is_empty() {
                return Err(CorpusError::InvalidLexicon(format!("empty {name} list")));
            }
            if let Some(dup) = first_duplicate(list.iter()) {
                return Err(CorpusError::InvalidLexicon(format!(
                    "duplicate lemma '{dup}' in {name}"
                )));
            }
        }
        if self.verbs.is_empty() {
            return Err(CorpusError::InvalidLexicon("empty verbs list".into()));
        }
        if let Some(dup) = first_duplicate(self.verbs.iter().map(|v| &v.lemma)) {
            return Err(CorpusError::InvalidLexicon(format!(
                "duplicate verb lemma '{dup}' (each verb carries exactly one preposition)"
            )));
        }
        let animate: HashSet<&String> = self.agents.iter().chain(&self.recipients).collect();
        if let Some(clash) = self.themes.iter().find(|t| animate.contains(t)) {
            return Err(CorpusError::InvalidLexicon(format!(
                "animacy clash: lemma '{clash}' is in both an animate pool and themes"
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file = path.display().to_string();

        let mut agents = Vec::new();
        let mut recipients = Vec::new();
        let mut themes = Vec::new();
        let mut verbs = Vec::new();
        let mut determiners = Vec::new();
        let mut section: Option<&str> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end();
            if line.is_empty() || line.starts_with("#!") {
                continue;
            }
            if let Some(name) = line.strip_prefix('#') {
                section = match name.trim() {
                    "agents" => Some("agents"),
                    "recipients" => Some("recipients"),
                    "themes" => Some("themes"),
                    "verbs" => Some("verbs"),
                    "determiners" => Some("determiners"),
                    other => {
                        return Err(CorpusError::Parse {
                            file,
                            line: line_no,
                            msg: format!("unknown section '#{other}'"),
                        })
                    }
                };
                continue;
            }
            let Some(section) = section else {
                return Err(CorpusError::Parse {
                    file,
                    line: line_no,
                    msg: "entry before any section header".into(),
                });
            };
            match section {
                "verbs" => {
                    let mut parts = line.split('\t');
                    let lemma = parts.next().unwrap_or("").trim();
                    let prep = parts.next().map(str::trim).unwrap_or("");
                    if lemma.is_empty() || prep.is_empty() {
                        return Err(CorpusError::Parse {
                            file,
                            line: line_no,
                            msg: "verb row must be 'lemma<TAB>preposition'".into(),
                        });
                    }
                    verbs.push(Verb { lemma: lemma.to_string(), preposition: prep.to_string() });
                }
                _ => {
                    let lemma = line.trim();
                    let target = match section {
                        "agents" => &mut agents,
                        "recipients" => &mut recipients,
                        "themes" => &mut themes,
                        "determiners" => &mut determiners,
                        _ => unreachable!(),
                    };
                    target.push(lemma.to_string());
                }
            }
        }
        Lexicon::new(agents, recipients, themes, verbs, determiners)
    }

    /// Verbs requiring the given preposition.
    pub fn verbs_with_prep<'a>(&'a self, prep: &'a str) -> impl Iterator<Item = &'a Verb> {
        self.verbs.iter().filter(move |v| v.preposition == prep)
    }

    /// True when some preposition is required by at least two verbs
    /// (needed by the preposition-overlap condition).
    pub fn has_shared_preposition(&self) -> bool {
        self.verbs
            .iter()
            .any(|v| self.verbs_with_prep(&v.preposition).count() >= 2)
    }
}

fn first_duplicate<'a>(items: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item) {
            return Some(item);
        }
    }
    None
}
