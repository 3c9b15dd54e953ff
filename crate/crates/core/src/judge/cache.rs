//! Verdict memoization for deterministic judges.
//!
//! Outcomes are keyed by (judge id, prompt hash, baseline hash, candidate
//! hash) — order matters, so the swapped duel is a distinct key. Entries
//! persist to a JSONL file of `{key, verdict, raw}` records and are reloaded
//! on open; corrupt lines are logged and treated as misses.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ComparisonOutcome, Verdict};
use crate::error::{Error, Result};

use super::{DuelRequest, Judge};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<String>,
}

/// Memoizing wrapper around a judge.
///
/// The inner judge must be deterministic per (prompt, pair, order); caching a
/// stochastic judge freezes its first answer per key. Cache hits issue no
/// inner call and never change the returned verdict. Writes are
/// single-writer-per-key: when two threads race on the same missing key, the
/// first inserted outcome wins and is what both return.
pub struct CachedJudge<J> {
    inner: J,
    entries: Mutex<HashMap<String, CacheRecord>>,
    sink: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl<J: Judge> CachedJudge<J> {
    /// In-memory cache, nothing persisted.
    pub fn in_memory(inner: J) -> Self {
        CachedJudge {
            inner,
            entries: Mutex::new(HashMap::new()),
            sink: None,
            path: None,
        }
    }

    /// Disk-backed cache. Existing entries are loaded; new outcomes are
    /// appended as they are produced.
    pub fn open(inner: J, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (line_no, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) => {
                        entries.insert(record.key.clone(), record);
                    }
                    Err(e) => {
                        log::warn!(
                            "judge cache {}:{}: corrupt entry treated as miss: {e}",
                            path.display(),
                            line_no + 1
                        );
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(CachedJudge {
            inner,
            entries: Mutex::new(entries),
            sink: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path),
        })
    }

    pub fn inner(&self) -> &J {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(&self, duel: &DuelRequest<'_>) -> String {
        fn digest(text: &str) -> String {
            let mut hasher = Sha256::new();
            hasher.update(text.as_bytes());
            let bytes = hasher.finalize();
            bytes.iter().fold(String::with_capacity(64), |mut s, b| {
                use std::fmt::Write;
                let _ = write!(s, "{b:02x}");
                s
            })
        }
        format!(
            "{}:{}:{}:{}",
            self.inner.id(),
            digest(duel.prompt),
            digest(duel.baseline_text),
            digest(duel.candidate_text)
        )
    }

    fn persist(&self, record: &CacheRecord) {
        let Some(sink) = &self.sink else { return };
        let line = match serde_json::to_string(record) {
            Ok(l) => l,
            Err(e) => {
                log::warn!("judge cache: failed to serialize entry: {e}");
                return;
            }
        };
        let mut sink = sink.lock().unwrap();
        if let Err(e) = sink
            .write_all(line.as_bytes())
            .and_then(|_| sink.write_all(b"\n"))
            .and_then(|_| sink.flush())
        {
            log::warn!(
                "judge cache {}: append failed: {e}",
                self.path.as_deref().unwrap_or(Path::new("?")).display()
            );
        }
    }

    fn outcome_from(&self, record: &CacheRecord, duel: &DuelRequest<'_>) -> ComparisonOutcome {
        ComparisonOutcome {
            verdict: record.verdict,
            baseline_index: duel.baseline_index.unwrap_or(0),
            candidate_index: duel.candidate_index.unwrap_or(1),
            judge_id: self.inner.id().to_string(),
            raw_evidence: record.raw.clone(),
        }
    }
}

impl<J: Judge> Judge for CachedJudge<J> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn compare(&self, duel: &DuelRequest<'_>) -> Result<ComparisonOutcome> {
        let key = self.key(duel);
        if let Some(record) = self.entries.lock().unwrap().get(&key) {
            return Ok(self.outcome_from(record, duel));
        }

        let outcome = self.inner.compare(duel)?;
        let record = CacheRecord {
            key: key.clone(),
            verdict: outcome.verdict,
            raw: outcome.raw_evidence.clone(),
        };

        let mut entries = self.entries.lock().unwrap();
        match entries.entry(key) {
            Entry::Occupied(existing) => {
                // Lost the race; defer to the first writer.
                let existing = existing.get().clone();
                drop(entries);
                Ok(self.outcome_from(&existing, duel))
            }
            Entry::Vacant(slot) => {
                slot.insert(record.clone());
                drop(entries);
                self.persist(&record);
                Ok(outcome)
            }
        }
    }
}
