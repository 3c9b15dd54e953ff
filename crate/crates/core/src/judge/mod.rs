//! Pluggable pairwise-comparison backends.
//!
//! Three judges share one trait: [`SimulatedJudge`] compares latent rewards
//! deterministically (the test oracle for every tournament property),
//! [`Scorer`] is a reward-model stand-in that returns noisy absolute scores,
//! and [`HttpJudge`] drives an OpenAI-compatible chat endpoint with the
//! ranking prompt. [`CachedJudge`] wraps any of them with a persistent
//! verdict cache.

mod cache;
mod http;

pub use cache::CachedJudge;
pub use http::{HttpJudge, HttpJudgeConfig, HttpJudgeStats};

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CandidateSet, ComparisonOutcome, JsonlReader, Verdict};
use crate::error::{Error, Result};

/// One pairwise comparison request.
///
/// Indices are optional: tournament drivers always provide them, while the
/// agreement evaluator judges free-standing pairs and lets index-keyed
/// judges resolve the completion text instead.
#[derive(Debug, Clone, Copy)]
pub struct DuelRequest<'a> {
    pub prompt_id: &'a str,
    pub prompt: &'a str,
    pub baseline_index: Option<usize>,
    pub candidate_index: Option<usize>,
    pub baseline_text: &'a str,
    pub candidate_text: &'a str,
}

/// A pairwise comparator. Implementations must be safe for concurrent use.
pub trait Judge: Send + Sync {
    /// Stable identifier recorded in outcomes and cache keys.
    fn id(&self) -> &str;

    fn compare(&self, duel: &DuelRequest<'_>) -> Result<ComparisonOutcome>;
}

/// Ground-truth rewards for simulation, keyed by (prompt id, candidate index),
/// with a symmetric tie band ε around the reward gap.
#[derive(Debug, Clone)]
pub struct LatentRewardTable {
    rewards: HashMap<String, Vec<f64>>,
    tie_band: f64,
}

#[derive(Serialize, Deserialize)]
struct RewardRow {
    prompt_id: String,
    rewards: Vec<f64>,
}

impl LatentRewardTable {
    pub fn new(tie_band: f64) -> Result<Self> {
        if tie_band.is_nan() || tie_band < 0.0 {
            return Err(Error::Config(format!(
                "tie_band must be non-negative, got {tie_band}"
            )));
        }
        Ok(LatentRewardTable {
            rewards: HashMap::new(),
            tie_band,
        })
    }

    pub fn tie_band(&self) -> f64 {
        self.tie_band
    }

    pub fn insert(&mut self, prompt_id: impl Into<String>, rewards: Vec<f64>) {
        self.rewards.insert(prompt_id.into(), rewards);
    }

    pub fn reward(&self, prompt_id: &str, index: usize) -> Result<f64> {
        self.rewards
            .get(prompt_id)
            .and_then(|r| r.get(index))
            .copied()
            .ok_or_else(|| Error::MissingReward {
                prompt_id: prompt_id.to_string(),
                index,
            })
    }

    pub fn rewards_for(&self, prompt_id: &str) -> Option<&[f64]> {
        self.rewards.get(prompt_id).map(|r| r.as_slice())
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = &str> {
        self.rewards.keys().map(|k| k.as_str())
    }

    /// Standard-normal rewards for every (prompt, index) cell.
    pub fn random<R: Rng>(
        prompt_ids: &[String],
        candidates_per_prompt: usize,
        tie_band: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let mut table = LatentRewardTable::new(tie_band)?;
        for id in prompt_ids {
            let rewards = (0..candidates_per_prompt)
                .map(|_| normal.sample(rng))
                .collect();
            table.insert(id.clone(), rewards);
        }
        Ok(table)
    }

    /// Reads rows of `{"prompt_id": ..., "rewards": [...]}`.
    pub fn read_jsonl(path: impl AsRef<Path>, tie_band: f64) -> Result<Self> {
        let mut table = LatentRewardTable::new(tie_band)?;
        let reader: JsonlReader<RewardRow> = JsonlReader::open(path)?;
        for row in reader {
            let row = row?;
            table.insert(row.prompt_id, row.rewards);
        }
        Ok(table)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut rows: Vec<RewardRow> = self
            .rewards
            .iter()
            .map(|(prompt_id, rewards)| RewardRow {
                prompt_id: prompt_id.clone(),
                rewards: rewards.clone(),
            })
            .collect();
        rows.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        crate::data::write_jsonl_records(&rows, path.as_ref())
    }
}

/// Deterministic ternary comparison of two latent rewards.
///
/// BaselineWins iff the baseline reward exceeds the candidate's by more than
/// the tie band, CandidateWins in the mirrored case, Tie otherwise. Symmetric
/// by construction: swapping the two indices flips the verdict and preserves
/// ties.
pub fn simulated_compare(
    table: &LatentRewardTable,
    prompt_id: &str,
    baseline_index: usize,
    candidate_index: usize,
) -> Result<ComparisonOutcome> {
    let baseline = table.reward(prompt_id, baseline_index)?;
    let candidate = table.reward(prompt_id, candidate_index)?;
    let eps = table.tie_band;
    let verdict = if baseline > candidate + eps {
        Verdict::BaselineWins
    } else if candidate > baseline + eps {
        Verdict::CandidateWins
    } else {
        Verdict::Tie
    };
    Ok(ComparisonOutcome {
        verdict,
        baseline_index,
        candidate_index,
        judge_id: SIMULATED_JUDGE_ID.to_string(),
        raw_evidence: Some(format!("reward_gap={}", baseline - candidate)),
    })
}

pub const SIMULATED_JUDGE_ID: &str = "simulated";

/// Judge backed by a [`LatentRewardTable`].
///
/// Duels arriving without indices (agreement over free-standing pairs) are
/// resolved by completion text against the candidate sets supplied at
/// construction.
#[derive(Clone)]
pub struct SimulatedJudge {
    table: Arc<LatentRewardTable>,
    text_index: HashMap<String, HashMap<String, usize>>,
}

impl SimulatedJudge {
    pub fn new(table: Arc<LatentRewardTable>) -> Self {
        SimulatedJudge {
            table,
            text_index: HashMap::new(),
        }
    }

    /// Also index candidate texts so index-less duels can be resolved.
    /// Duplicate texts within a set resolve to the first occurrence.
    pub fn with_sets(table: Arc<LatentRewardTable>, sets: &[CandidateSet]) -> Self {
        let mut text_index = HashMap::new();
        for set in sets {
            let by_text: &mut HashMap<String, usize> =
                text_index.entry(set.prompt_id.clone()).or_default();
            for (i, text) in set.candidates.iter().enumerate() {
                by_text.entry(text.clone()).or_insert(i);
            }
        }
        SimulatedJudge { table, text_index }
    }

    pub fn table(&self) -> &LatentRewardTable {
        &self.table
    }

    fn resolve(&self, prompt_id: &str, index: Option<usize>, text: &str) -> Result<usize> {
        if let Some(i) = index {
            return Ok(i);
        }
        self.text_index
            .get(prompt_id)
            .and_then(|m| m.get(text))
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "simulated judge cannot resolve completion text for prompt {prompt_id:?}; \
                     pass candidate indices or construct the judge with candidate sets"
                ))
            })
    }
}

impl Judge for SimulatedJudge {
    fn id(&self) -> &str {
        SIMULATED_JUDGE_ID
    }

    fn compare(&self, duel: &DuelRequest<'_>) -> Result<ComparisonOutcome> {
        let b = self.resolve(duel.prompt_id, duel.baseline_index, duel.baseline_text)?;
        let c = self.resolve(duel.prompt_id, duel.candidate_index, duel.candidate_text)?;
        simulated_compare(&self.table, duel.prompt_id, b, c)
    }
}

/// Scoring configuration: additive Gaussian noise on top of the latent table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub noise_sigma: f64,
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Reward-model stand-in: latent reward plus Gaussian noise of std
/// `noise_sigma` (zero noise means the exact latent value).
#[derive(Clone)]
pub struct Scorer {
    table: Arc<LatentRewardTable>,
    noise_sigma: f64,
}

impl Scorer {
    pub fn new(table: Arc<LatentRewardTable>, config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Scorer {
            table,
            noise_sigma: config.noise_sigma,
        })
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn score<R: Rng>(
        &self,
        prompt_id: &str,
        candidate_index: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let latent = self.table.reward(prompt_id, candidate_index)?;
        if self.noise_sigma == 0.0 {
            return Ok(latent);
        }
        let normal = Normal::new(0.0, self.noise_sigma)
            .map_err(|e| Error::Config(format!("invalid noise sigma: {e}")))?;
        Ok(latent + normal.sample(rng))
    }
}

/// Verdict token emitted by an LLM judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeVerdict {
    A,
    B,
    Tie,
}

impl JudgeVerdict {
    /// Maps a verdict to an outcome under the convention that the baseline
    /// completion was shown as assistant A and the candidate as assistant B.
    pub fn into_verdict(self) -> Verdict {
        match self {
            JudgeVerdict::A => Verdict::BaselineWins,
            JudgeVerdict::B => Verdict::CandidateWins,
            JudgeVerdict::Tie => Verdict::Tie,
        }
    }
}

/// Renders the pairwise ranking prompt with the question and the two answers
/// inside `<question>`, `<assistant_a>`, `<assistant_b>` tags.
pub fn render_judge_prompt(question: &str, response_a: &str, response_b: &str) -> Result<String> {
    for (name, value) in [
        ("question", question),
        ("response_a", response_a),
        ("response_b", response_b),
    ] {
        if value.is_empty() {
            return Err(Error::Config(format!("{name} must be non-empty")));
        }
    }
    Ok(format!(
        "You are a helpful assistant, that ranks models by the quality of their answers.\n\
         Act as an impartial judge and evaluate the quality of the responses provided by two AI assistants to the user question displayed below.\n\
         The length of the response generated by each assistant is not a criterion for evaluation.\n\
         Your evaluation should consider correctness, helpfulness, completeness, and clarity of the responses.\n\
         Remember not to allow the length of the responses to influence your evaluation.\n\
         You will be given the question within <question> tags,\n\
         assistant A's answer within <assistant_a> tags,\n\
         and assistant B's answer within <assistant_b> tags.\n\
         Your job is to evaluate whether assistant A's answer or assistant B's answer is better.\n\
         Avoid any position biases and ensure that the order in which the responses are presented does not\n\
         influence your decision. Be as objective as possible.\n\
         After providing your explanation, output your final verdict within <verdict> tags strictly following this format:\n\
         <verdict>A</verdict> if assistant A is better, <verdict>B</verdict> if assistant B is better, and <verdict>tie</verdict> for a tie.\n\
         You must provide your final verdict with the format <verdict>xxx</verdict> once in your response!!!\n\
         \n\
         <question>\n\
         {question}\n\
         </question>\n\
         \n\
         <assistant_a>\n\
         {response_a}\n\
         </assistant_a>\n\
         \n\
         <assistant_b>\n\
         {response_b}\n\
         </assistant_b>"
    ))
}

/// Extracts the verdict from a judge completion.
///
/// Takes the LAST complete `<verdict>…</verdict>` pair (judges often restate
/// the requested format before deciding), trims whitespace, and matches
/// A/B/tie case-insensitively.
pub fn parse_verdict(raw: &str) -> Result<JudgeVerdict> {
    const OPEN: &str = "<verdict>";
    const CLOSE: &str = "</verdict>";

    let mut last: Option<&str> = None;
    let mut from = 0;
    while let Some(start) = raw[from..].find(OPEN) {
        let content_start = from + start + OPEN.len();
        match raw[content_start..].find(CLOSE) {
            Some(end) => {
                last = Some(&raw[content_start..content_start + end]);
                from = content_start + end + CLOSE.len();
            }
            None => break,
        }
    }

    let token = last.ok_or_else(|| Error::VerdictParse {
        raw: raw.to_string(),
    })?;
    match token.trim().to_ascii_lowercase().as_str() {
        "a" => Ok(JudgeVerdict::A),
        "b" => Ok(JudgeVerdict::B),
        "tie" => Ok(JudgeVerdict::Tie),
        _ => Err(Error::VerdictParse {
            raw: raw.to_string(),
        }),
    }
}
