//! Semantic resources consumed by the condition checks: free-association
//! norms and fixed-dimension embedding tables. Both are ingested from files;
//! computing or training them is out of scope.

use std::collections::HashMap;
use std::path::Path;

use crate::Real;

use super::CorpusError;

/// Directed cue→target association strengths in [0,1]. Absent pairs have
/// strength 0.
#[derive(Debug, Clone, Default)]
pub struct AssociationNorms {
    entries: HashMap<(String, String), Real>,
}

impl AssociationNorms {
    pub fn new(entries: impl IntoIterator<Item = (String, String, Real)>) -> Result<Self, CorpusError> {
        let mut map = HashMap::new();
        for (cue, target, strength) in entries {
            if !(0.0..=1.0).contains(&strength) {
                return Err(CorpusError::InvalidNorms(format!(
                    "strength {strength} for ({cue},{target}) outside [0,1]"
                )));
            }
            map.insert((cue.to_lowercase(), target.to_lowercase()), strength);
        }
        Ok(AssociationNorms { entries: map })
    }

    /// Loads `cue,target,strength` CSV rows; a literal header row is allowed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| CorpusError::InvalidNorms(format!("{file}: {e}")))?;
        let mut rows = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let line = idx + 1;
            let record = record.map_err(|e| CorpusError::Parse {
                file: file.clone(),
                line,
                msg: e.to_string(),
            })?;
            if idx == 0 && record.get(0) == Some("cue") {
                continue;
            }
            if record.len() != 3 {
                return Err(CorpusError::Parse {
                    file,
                    line,
                    msg: format!("expected 'cue,target,strength', got {} fields", record.len()),
                });
            }
            let strength: Real = record[2].trim().parse().map_err(|_| CorpusError::Parse {
                file: file.clone(),
                line,
                msg: format!("invalid strength '{}'", &record[2]),
            })?;
            rows.push((record[0].trim().to_string(), record[1].trim().to_string(), strength));
        }
        AssociationNorms::new(rows)
    }

    /// Directed lookup; 0 when the pair is absent. Case-insensitive.
    pub fn strength(&self, cue: &str, target: &str) -> Real {
        self.entries
            .get(&(cue.to_lowercase(), target.to_lowercase()))
            .copied()
            .unwrap_or(0.0)
    }

    /// Maximum of the two directed strengths.
    pub fn strength_either(&self, a: &str, b: &str) -> Real {
        self.strength(a, b).max(self.strength(b, a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Fixed-dimension real vectors keyed by string. Used for word embeddings
/// and (keyed by full rendering) sentence embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Vec<Real>>,
}

impl EmbeddingTable {
    pub fn new(vectors: impl IntoIterator<Item = (String, Vec<Real>)>) -> Result<Self, CorpusError> {
        let mut map: HashMap<String, Vec<Real>> = HashMap::new();
        let mut dimension = 0usize;
        for (key, vec) in vectors {
            if map.is_empty() {
                dimension = vec.len();
            }
            if vec.is_empty() || vec.len() != dimension {
                return Err(CorpusError::InvalidEmbeddings(format!(
                    "vector for '{key}' has dimension {}, expected {dimension}",
                    vec.len()
                )));
            }
            if vec.iter().all(|&x| x == 0.0) {
                return Err(CorpusError::InvalidEmbeddings(format!(
                    "zero vector for '{key}' (cosine undefined)"
                )));
            }
            if !vec.iter().all(|x| x.is_finite()) {
                return Err(CorpusError::InvalidEmbeddings(format!("non-finite vector for '{key}'")));
            }
            if map.insert(key.clone(), vec).is_some() {
                return Err(CorpusError::InvalidEmbeddings(format!("duplicate key '{key}'")));
            }
        }
        if map.is_empty() {
            return Err(CorpusError::InvalidEmbeddings("empty table".into()));
        }
        Ok(EmbeddingTable { dimension, vectors: map })
    }

    /// Loads `key<TAB>v1<TAB>…<TAB>vd` lines. The key is everything before
    /// the first tab and may contain spaces (sentence-embedding files).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let mut parts = raw.split('\t');
            let key = parts.next().unwrap_or("").to_string();
            let mut vec = Vec::new();
            for field in parts {
                let x: Real = field.trim().parse().map_err(|_| CorpusError::Parse {
                    file: file.clone(),
                    line,
                    msg: format!("invalid vector component '{field}'"),
                })?;
                vec.push(x);
            }
            rows.push((key, vec));
        }
        EmbeddingTable::new(rows)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, key: &str) -> Option<&[Real]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.vectors.contains_key(key)
    }

    /// Cosine similarity; `None` when either key is absent. Vectors are
    /// validated non-zero at construction, so the value is always defined.
    pub fn cosine(&self, a: &str, b: &str) -> Option<Real> {
        let va = self.get(a)?;
        let vb = self.get(b)?;
        Some(cosine(va, vb))
    }
}

/// Cosine similarity of two equal-length non-zero vectors.
pub fn cosine(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    #[test]
    fn absent_norm_pair_is_zero() {
        let norms =
            AssociationNorms::new([("girl".to_string(), "woman".to_string(), 0.3)]).unwrap();
        assert_eq!(norms.strength("girl", "woman"), 0.3);
        assert_eq!(norms.strength("woman", "girl"), 0.0);
        assert_eq!(norms.strength_either("woman", "girl"), 0.3);
        assert_eq!(norms.strength("girl", "ball"), 0.0);
    }

    #[test]
    fn norms_reject_out_of_range_strength() {
        let err = AssociationNorms::new([("a".to_string(), "b".to_string(), 1.5)]).unwrap_err();
        assert!(err.to_string().contains("outside [0,1]"), "{err}");
    }

    #[test]
    fn norms_csv_roundtrip_with_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cue,target,strength").unwrap();
        writeln!(f, "girl,woman,0.41").unwrap();
        let norms = AssociationNorms::load(f.path()).unwrap();
        assert_eq!(norms.len(), 1);
        assert_abs_diff_eq!(norms.strength("GIRL", "Woman"), 0.41);
    }

    #[test]
    fn embeddings_enforce_shared_dimension_and_nonzero() {
        let err = EmbeddingTable::new([
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![1.0]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("dimension"), "{err}");

        let err = EmbeddingTable::new([("a".to_string(), vec![0.0, 0.0])]).unwrap_err();
        assert!(err.to_string().contains("zero vector"), "{err}");
    }

    #[test]
    fn cosine_by_hand() {
        // (1,0) vs (0.5, sqrt(3)/2): unit vectors at 60 degrees, cosine 0.5
        let table = EmbeddingTable::new([
            ("x".to_string(), vec![1.0, 0.0]),
            ("y".to_string(), vec![0.5, 3f64.sqrt() / 2.0]),
        ])
        .unwrap();
        assert_abs_diff_eq!(table.cosine("x", "y").unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(table.cosine("x", "missing"), None);
    }

    #[test]
    fn embedding_file_keys_may_contain_spaces() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "The girl gave the ball to the boy .\t0.5\t0.25").unwrap();
        let table = EmbeddingTable::load(f.path()).unwrap();
        assert_eq!(table.dimension(), 2);
        assert!(table.contains("The girl gave the ball to the boy ."));
    }
}
