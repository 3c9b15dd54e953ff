//! Judge-agreement measurement over preference pairs.
//!
//! Each pair is judged with the dispreferred completion as the baseline and
//! the preferred completion as the candidate; agreement counts CandidateWins.
//! Ties are reported separately rather than folded into disagreement.

use serde::Serialize;

use crate::data::{CandidateSet, PreferencePair, PromptRecord, Verdict};
use crate::error::{Error, Result};
use crate::exec;
use crate::judge::{DuelRequest, Judge, Scorer};
use crate::ranking::{build_pairs, BuildConfig};

/// Agreement tallies over one pair set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AgreementStats {
    /// Pairs that produced a verdict.
    pub n: usize,
    pub agreements: usize,
    pub ties: usize,
    pub disagreements: usize,
    /// Judge failures, excluded from `n`.
    pub failures: usize,
}

impl AgreementStats {
    pub fn agreement_pct(&self) -> f64 {
        100.0 * self.agreements as f64 / self.n as f64
    }

    pub fn tie_pct(&self) -> f64 {
        100.0 * self.ties as f64 / self.n as f64
    }

    pub fn disagreement_pct(&self) -> f64 {
        100.0 * self.disagreements as f64 / self.n as f64
    }
}

fn judge_pair(pair: &PreferencePair, judge: &dyn Judge, symmetrize: bool) -> Result<Verdict> {
    let forward = DuelRequest {
        prompt_id: &pair.prompt_id,
        prompt: &pair.prompt,
        baseline_index: None,
        candidate_index: None,
        baseline_text: &pair.dispreferred,
        candidate_text: &pair.preferred,
    };
    let verdict = judge.compare(&forward)?.verdict;
    if !symmetrize {
        return Ok(verdict);
    }
    let reversed = DuelRequest {
        baseline_text: &pair.preferred,
        candidate_text: &pair.dispreferred,
        ..forward
    };
    let mirrored = judge.compare(&reversed)?.verdict.flipped();
    Ok(if mirrored == verdict {
        verdict
    } else {
        Verdict::Tie
    })
}

/// Judges every pair with baseline = dispreferred, candidate = preferred.
///
/// With `symmetrize`, both orderings are judged and a disagreement counts as
/// a tie. Pairs are judged concurrently; aggregation is order-independent.
pub fn agreement(
    pairs: &[PreferencePair],
    judge: &dyn Judge,
    symmetrize: bool,
) -> Result<AgreementStats> {
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to evaluate".into()));
    }
    let verdicts = exec::map_ordered(pairs, |_, pair| judge_pair(pair, judge, symmetrize));

    let mut stats = AgreementStats {
        n: 0,
        agreements: 0,
        ties: 0,
        disagreements: 0,
        failures: 0,
    };
    for verdict in verdicts {
        match verdict {
            Ok(Verdict::CandidateWins) => {
                stats.n += 1;
                stats.agreements += 1;
            }
            Ok(Verdict::Tie) => {
                stats.n += 1;
                stats.ties += 1;
            }
            Ok(Verdict::BaselineWins) => {
                stats.n += 1;
                stats.disagreements += 1;
            }
            Err(e) => {
                log::warn!("agreement: judge failed on a pair: {e}");
                stats.failures += 1;
            }
        }
    }
    if stats.n == 0 {
        return Err(Error::Config("no judged pairs".into()));
    }
    Ok(stats)
}

/// One pair-construction recipe to measure.
pub struct StrategyConfig<'a> {
    pub label: String,
    pub judge: Option<&'a dyn Judge>,
    pub scorer: Option<&'a Scorer>,
    pub build: BuildConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub n: usize,
    pub agreement_pct: f64,
    pub tie_pct: f64,
    pub disagreement_pct: f64,
}

/// Agreement table: one row per construction strategy.
#[derive(Debug, Clone, Default)]
pub struct StrategyTable {
    pub rows: Vec<StrategyRow>,
    /// (label, error) for strategies that failed outright.
    pub failures: Vec<(String, String)>,
}

impl StrategyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,n,agreement_pct,tie_pct,disagreement_pct\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.strategy, row.n, row.agreement_pct, row.tie_pct, row.disagreement_pct
            ));
        }
        out
    }

    pub fn row(&self, label: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == label)
    }
}

/// Builds pairs per strategy and scores each batch against the evaluation
/// judge. Per-strategy failures are recorded and the table is still emitted.
pub fn compare_strategies(
    prompts: &[PromptRecord],
    sets: &[CandidateSet],
    eval_judge: &dyn Judge,
    symmetrize: bool,
    strategies: &[StrategyConfig<'_>],
) -> Result<StrategyTable> {
    if strategies.is_empty() {
        return Err(Error::Config("no strategies to compare".into()));
    }
    let mut table = StrategyTable::default();
    for strategy in strategies {
        let outcome = build_pairs(
            prompts,
            sets,
            strategy.judge,
            strategy.scorer,
            &strategy.build,
        )
        .and_then(|report| agreement(&report.pairs, eval_judge, symmetrize));
        match outcome {
            Ok(stats) => table.rows.push(StrategyRow {
                strategy: strategy.label.clone(),
                n: stats.n,
                agreement_pct: stats.agreement_pct(),
                tie_pct: stats.tie_pct(),
                disagreement_pct: stats.disagreement_pct(),
            }),
            Err(e) => {
                log::warn!("strategy {}: {e}", strategy.label);
                table.failures.push((strategy.label.clone(), e.to_string()));
            }
        }
    }
    Ok(table)
}
