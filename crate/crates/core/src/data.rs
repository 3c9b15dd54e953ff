//! Domain types and JSONL persistence for prompts, candidate sets,
//! preference pairs, and ranking traces.
//!
//! Every dataset is JSONL: one object per line, streamed in file order.
//! Text is stored verbatim (no normalization) so downstream judges see
//! exactly what the generator produced. All types are immutable after
//! construction and safe to share across threads.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
}

/// A prompt id plus its M candidate completions awaiting ranking.
///
/// Candidate order is stable and significant: index 0 is the initial
/// baseline of every tournament.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompt_id: String,
    pub candidates: Vec<String>,
}

impl CandidateSet {
    /// Number of candidates (M).
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// M ≥ 2 or an error naming the offending set.
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            return Err(Error::InvalidRecord(format!(
                "candidate set for prompt {:?}: need at least 2 candidates, got {}",
                self.prompt_id,
                self.candidates.len()
            )));
        }
        Ok(())
    }
}

/// Ternary result of one judged duel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BaselineWins,
    CandidateWins,
    Tie,
}

impl Verdict {
    /// Mirror verdict under swapped duel order; ties are fixed points.
    pub fn flipped(self) -> Self {
        match self {
            Verdict::BaselineWins => Verdict::CandidateWins,
            Verdict::CandidateWins => Verdict::BaselineWins,
            Verdict::Tie => Verdict::Tie,
        }
    }
}

/// One judged duel with its raw evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub verdict: Verdict,
    pub baseline_index: usize,
    pub candidate_index: usize,
    pub judge_id: String,
    /// Judge explanation or latent-reward gap, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_evidence: Option<String>,
}

impl ComparisonOutcome {
    pub fn validate(&self) -> Result<()> {
        if self.baseline_index == self.candidate_index {
            return Err(Error::InvalidRecord(format!(
                "comparison outcome duels index {} against itself",
                self.baseline_index
            )));
        }
        Ok(())
    }
}

/// Record of one tournament: every outcome in order plus the selection.
///
/// Traces produced by winner selection alone hold M−1 outcomes (full mode);
/// traces attached to a finished pair additionally hold the inverted
/// tournament that picked the loser, so `judge_calls == outcomes.len()`
/// in both cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTrace {
    pub prompt_id: String,
    pub outcomes: Vec<ComparisonOutcome>,
    pub winner_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loser_index: Option<usize>,
    pub judge_calls: usize,
}

/// How a pair's winner/loser were selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ipr,
    Scoring,
    Copeland,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Ipr => write!(f, "ipr"),
            Strategy::Scoring => write!(f, "scoring"),
            Strategy::Copeland => write!(f, "copeland"),
        }
    }
}

/// One training tuple: prompt, preferred completion, dispreferred completion,
/// with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub prompt: String,
    pub preferred: String,
    pub dispreferred: String,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<RankingTrace>,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.preferred == self.dispreferred {
            return Err(Error::InvalidRecord(format!(
                "pair for prompt {:?}: preferred == dispreferred",
                self.prompt_id
            )));
        }
        Ok(())
    }
}

/// Streaming JSONL reader: one deserialized record per line, with the line
/// number attached to every parse error.
pub struct JsonlReader<T> {
    lines: Lines<BufReader<File>>,
    path: PathBuf,
    line_no: usize,
    _record: PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonlReader {
            lines: BufReader::new(file).lines(),
            path,
            line_no: 0,
            _record: PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&line)
                    .map_err(|e| Error::json_line(&self.path, self.line_no, e.to_string())),
            );
        }
    }
}

impl<T> JsonlReader<T> {
    fn current_line(&self) -> usize {
        self.line_no
    }

    fn path(&self) -> &Path {
        &self.path
    }
}

/// Streams prompts from a JSONL file, rejecting duplicate ids and empty ids.
pub struct PromptReader {
    inner: JsonlReader<PromptRecord>,
    seen: HashSet<String>,
}

impl Iterator for PromptReader {
    type Item = Result<PromptRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        if record.id.is_empty() {
            return Some(Err(Error::json_line(
                self.inner.path(),
                self.inner.current_line(),
                "prompt id must be non-empty",
            )));
        }
        if !self.seen.insert(record.id.clone()) {
            return Some(Err(Error::json_line(
                self.inner.path(),
                self.inner.current_line(),
                format!("duplicate prompt id {:?}", record.id),
            )));
        }
        Some(Ok(record))
    }
}

/// Opens a prompts file; records are yielded in file order.
pub fn read_prompts(path: impl AsRef<Path>) -> Result<PromptReader> {
    Ok(PromptReader {
        inner: JsonlReader::open(path)?,
        seen: HashSet::new(),
    })
}

/// Streams candidate sets, rejecting sets with fewer than 2 candidates.
/// Unknown prompt ids are allowed here and validated at pair-building time.
pub struct CandidateReader {
    inner: JsonlReader<CandidateSet>,
}

impl Iterator for CandidateReader {
    type Item = Result<CandidateSet>;

    fn next(&mut self) -> Option<Self::Item> {
        let set = match self.inner.next()? {
            Ok(s) => s,
            Err(e) => return Some(Err(e)),
        };
        if let Err(e) = set.validate() {
            return Some(Err(Error::json_line(
                self.inner.path(),
                self.inner.current_line(),
                e.to_string(),
            )));
        }
        Some(Ok(set))
    }
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<CandidateReader> {
    Ok(CandidateReader {
        inner: JsonlReader::open(path)?,
    })
}

pub(crate) fn write_jsonl_records<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::InvalidRecord(format!("serialization failed: {e}")))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes pairs as JSONL, rejecting any pair whose preferred and dispreferred
/// completions are identical.
pub fn write_pairs(pairs: &[PreferencePair], path: impl AsRef<Path>) -> Result<()> {
    for pair in pairs {
        pair.validate()?;
    }
    write_jsonl_records(pairs, path.as_ref())
}

/// Reads pairs back, re-validating the invariant per line.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>> {
    let reader: JsonlReader<PreferencePair> = JsonlReader::open(path)?;
    let path = reader.path().to_path_buf();
    let mut pairs = Vec::new();
    for (index, record) in reader.enumerate() {
        let pair = record?;
        pair.validate()
            .map_err(|e| Error::json_line(&path, index + 1, e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_traces(traces: &[RankingTrace], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl_records(traces, path.as_ref())
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<RankingTrace>> {
    JsonlReader::open(path)?.collect()
}

pub fn write_prompts(prompts: &[PromptRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl_records(prompts, path.as_ref())
}

pub fn write_candidates(sets: &[CandidateSet], path: impl AsRef<Path>) -> Result<()> {
    for set in sets {
        set.validate()?;
    }
    write_jsonl_records(sets, path.as_ref())
}
