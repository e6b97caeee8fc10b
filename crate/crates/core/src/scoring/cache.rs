//! Append-only JSON Lines score cache with per-row checksums.
//!
//! Each row stores one (model_id, context, continuation) key with its scored
//! tokens and a CRC32 computed over the row's JSON serialization minus the
//! checksum field. On open, a final line that does not parse as JSON is
//! treated as an interrupted write: it is truncated away and recorded as a
//! warning so the run can resume. A parseable row whose checksum does not
//! match, or a malformed row before the end, is real corruption and fails
//! the open with its row number.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::Real;

use super::{ScoreBackend, ScoreError, ScoreRequest, ScoredSequence, ScoredToken};

type Key = (String, String, String);

#[derive(Serialize)]
struct RowBody<'a> {
    model_id: &'a str,
    context: &'a str,
    continuation: &'a str,
    backend_id: &'a str,
    tokens: &'a [ScoredToken],
    total_logprob: Real,
}

#[derive(Serialize, Deserialize)]
struct Row {
    model_id: String,
    context: String,
    continuation: String,
    backend_id: String,
    tokens: Vec<ScoredToken>,
    total_logprob: Real,
    crc32: u32,
}

impl Row {
    fn body_checksum(&self) -> u32 {
        let body = RowBody {
            model_id: &self.model_id,
            context: &self.context,
            continuation: &self.continuation,
            backend_id: &self.backend_id,
            tokens: &self.tokens,
            total_logprob: self.total_logprob,
        };
        let bytes = serde_json::to_vec(&body).expect("row body serializes");
        crc32fast::hash(&bytes)
    }
}

/// Persistent score store; one instance owns one cache file. Reads are
/// concurrent; writes serialize through a single buffered writer and flush
/// per row so an interrupted run loses at most the row being written.
pub struct ScoreCache {
    path: PathBuf,
    index: RwLock<HashMap<Key, ScoredSequence>>,
    writer: Mutex<BufWriter<File>>,
    hits: AtomicU64,
    misses: AtomicU64,
    warnings: Vec<String>,
}

impl ScoreCache {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ScoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };

        let mut index = HashMap::new();
        let mut warnings = Vec::new();
        let mut keep_len = text.len();
        let segments: Vec<&str> = text.split_inclusive('\n').collect();
        let mut offset = 0usize;
        for (i, segment) in segments.iter().enumerate() {
            let line = segment.trim_end_matches('\n');
            let row_no = i + 1;
            let is_last = i + 1 == segments.len();
            if line.is_empty() {
                offset += segment.len();
                continue;
            }
            match serde_json::from_str::<Row>(line) {
                Ok(row) => {
                    let expected = row.body_checksum();
                    if expected != row.crc32 {
                        return Err(ScoreError::CorruptCache {
                            row: row_no,
                            detail: format!(
                                "checksum {:#010x} does not match stored {:#010x}",
                                expected, row.crc32
                            ),
                        });
                    }
                    index.insert(
                        (row.model_id, row.context, row.continuation),
                        ScoredSequence {
                            backend_id: row.backend_id,
                            tokens: row.tokens,
                            total_logprob: row.total_logprob,
                        },
                    );
                }
                Err(e) if is_last => {
                    warnings.push(format!(
                        "{}: discarded partial trailing row {row_no} ({e})",
                        path.display()
                    ));
                    keep_len = offset;
                }
                Err(e) => {
                    return Err(ScoreError::CorruptCache { row: row_no, detail: e.to_string() })
                }
            }
            offset += segment.len();
        }
        if keep_len < text.len() {
            OpenOptions::new().write(true).open(&path)?.set_len(keep_len as u64)?;
        }

        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ScoreCache {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(BufWriter::new(file)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            warnings,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Messages about recovered-from conditions found at open time.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    fn key(request: &ScoreRequest) -> Key {
        (request.model_id.clone(), request.context.clone(), request.continuation.clone())
    }

    /// Lookup without touching the hit/miss counters.
    pub fn contains(&self, request: &ScoreRequest) -> bool {
        self.index.read().unwrap().contains_key(&Self::key(request))
    }

    pub fn get(&self, request: &ScoreRequest) -> Option<ScoredSequence> {
        let found = self.index.read().unwrap().get(&Self::key(request)).cloned();
        match &found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn put(&self, request: &ScoreRequest, seq: &ScoredSequence) -> Result<(), ScoreError> {
        let mut row = Row {
            model_id: request.model_id.clone(),
            context: request.context.clone(),
            continuation: request.continuation.clone(),
            backend_id: seq.backend_id.clone(),
            tokens: seq.tokens.clone(),
            total_logprob: seq.total_logprob,
            crc32: 0,
        };
        row.crc32 = row.body_checksum();
        let line = serde_json::to_string(&row).expect("row serializes");
        {
            let mut writer = self.writer.lock().unwrap();
            writeln!(writer, "{line}")?;
            writer.flush()?;
        }
        self.index.write().unwrap().insert(Self::key(request), seq.clone());
        Ok(())
    }
}

/// Write-through wrapper: serve from the cache, fall back to the inner
/// backend and persist what it returns.
pub struct CachedBackend<B> {
    inner: B,
    cache: std::sync::Arc<ScoreCache>,
}

impl<B: ScoreBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: std::sync::Arc<ScoreCache>) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }
}

impl<B: ScoreBackend> ScoreBackend for CachedBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        if let Some(seq) = self.cache.get(request) {
            seq.validate(&request.continuation)
                .map_err(|e| ScoreError::TokenizationMismatch(e.to_string()))?;
            return Ok(seq);
        }
        let seq = self.inner.score(request)?;
        self.cache.put(request, &seq)?;
        Ok(seq)
    }
}

/// Offline backend that serves cached rows only and reports anything absent.
pub struct CacheOnlyBackend {
    cache: std::sync::Arc<ScoreCache>,
}

impl CacheOnlyBackend {
    pub fn new(cache: std::sync::Arc<ScoreCache>) -> Self {
        CacheOnlyBackend { cache }
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }
}

impl ScoreBackend for CacheOnlyBackend {
    fn backend_id(&self) -> &str {
        "cache"
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoredSequence, ScoreError> {
        let seq = self.cache.get(request).ok_or_else(|| ScoreError::MissingRow {
            model_id: request.model_id.clone(),
            continuation: request.continuation.clone(),
        })?;
        seq.validate(&request.continuation)
            .map_err(|e| ScoreError::TokenizationMismatch(e.to_string()))?;
        Ok(seq)
    }
}
