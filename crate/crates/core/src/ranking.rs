//! Tournament selection over candidate sets.
//!
//! Winner selection follows the iterative chain: the baseline starts at
//! index 0 and duels each remaining candidate once; the candidate takes over
//! as baseline only on an outright win, so a tie keeps the current baseline
//! and an all-tie tournament returns index 0. That finds the best candidate
//! in exactly M−1 comparisons when the judge is transitive and symmetric.
//! [`copeland_select`] is the O(M²) round-robin oracle used to cross-check
//! it, and [`scoring_select`] is the absolute-score baseline.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    CandidateSet, ComparisonOutcome, PreferencePair, PromptRecord, RankingTrace, Strategy, Verdict,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::judge::{DuelRequest, Judge, Scorer};

/// When the winner tournament stops issuing comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// All M−1 comparisons.
    Full,
    /// Stop at the first non-tie outcome; its winner is the overall winner.
    FirstNonTie,
}

/// How the dispreferred completion is picked when the strategy is IPR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoserRule {
    /// Winner of the tournament run with all verdicts inverted.
    InvertedIpr,
    /// Argmin of scorer output.
    ScoringArgmin,
}

fn judge_duel(
    judge: &dyn Judge,
    prompt_id: &str,
    prompt: &str,
    set: &CandidateSet,
    baseline: usize,
    candidate: usize,
) -> Result<ComparisonOutcome> {
    judge
        .compare(&DuelRequest {
            prompt_id,
            prompt,
            baseline_index: Some(baseline),
            candidate_index: Some(candidate),
            baseline_text: &set.candidates[baseline],
            candidate_text: &set.candidates[candidate],
        })
        .map_err(|e| Error::Judge {
            prompt_id: prompt_id.to_string(),
            baseline_index: baseline,
            candidate_index: candidate,
            source: Box::new(e),
        })
}

/// Sequential pairwise winner selection.
///
/// In `Full` mode the trace holds exactly M−1 outcomes and the winner is the
/// final baseline. In `FirstNonTie` mode the tournament stops at the first
/// decisive duel; if every comparison ties the winner is index 0 in both
/// modes.
pub fn ipr_select(
    prompt: &str,
    set: &CandidateSet,
    judge: &dyn Judge,
    stop: StopRule,
) -> Result<RankingTrace> {
    set.validate()?;
    let m = set.len();
    let mut baseline = 0usize;
    let mut outcomes = Vec::with_capacity(m - 1);
    for candidate in 1..m {
        let outcome = judge_duel(judge, &set.prompt_id, prompt, set, baseline, candidate)?;
        let verdict = outcome.verdict;
        outcomes.push(outcome);
        if verdict == Verdict::CandidateWins {
            baseline = candidate;
        }
        if stop == StopRule::FirstNonTie && verdict != Verdict::Tie {
            break;
        }
    }
    Ok(RankingTrace {
        prompt_id: set.prompt_id.clone(),
        judge_calls: outcomes.len(),
        outcomes,
        winner_index: baseline,
        loser_index: None,
    })
}

/// Judge adapter that flips BaselineWins↔CandidateWins and fixes ties,
/// turning winner selection into loser selection.
pub struct InvertedJudge<'a> {
    inner: &'a dyn Judge,
    id: String,
}

impl<'a> InvertedJudge<'a> {
    pub fn new(inner: &'a dyn Judge) -> Self {
        let id = format!("inverted:{}", inner.id());
        InvertedJudge { inner, id }
    }
}

impl Judge for InvertedJudge<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn compare(&self, duel: &DuelRequest<'_>) -> Result<ComparisonOutcome> {
        let outcome = self.inner.compare(duel)?;
        Ok(ComparisonOutcome {
            verdict: outcome.verdict.flipped(),
            judge_id: self.id.clone(),
            ..outcome
        })
    }
}

/// Loser selection: the winner of the inverted tournament.
pub fn ipr_select_loser(
    prompt: &str,
    set: &CandidateSet,
    judge: &dyn Judge,
    stop: StopRule,
) -> Result<RankingTrace> {
    let inverted = InvertedJudge::new(judge);
    ipr_select(prompt, set, &inverted, stop)
}

/// Round-robin result.
#[derive(Debug, Clone, PartialEq)]
pub struct CopelandResult {
    pub winner_index: usize,
    /// Wins per candidate; ties contribute to neither side.
    pub scores: Vec<usize>,
    pub judge_calls: usize,
    pub outcomes: Vec<ComparisonOutcome>,
}

/// Runs all M(M−1)/2 unordered duels and returns the candidate with the most
/// wins, breaking score ties by lowest index.
pub fn copeland_select(
    prompt: &str,
    set: &CandidateSet,
    judge: &dyn Judge,
) -> Result<CopelandResult> {
    set.validate()?;
    let m = set.len();
    let mut scores = vec![0usize; m];
    let mut outcomes = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            let outcome = judge_duel(judge, &set.prompt_id, prompt, set, a, b)?;
            match outcome.verdict {
                Verdict::BaselineWins => scores[a] += 1,
                Verdict::CandidateWins => scores[b] += 1,
                Verdict::Tie => {}
            }
            outcomes.push(outcome);
        }
    }
    let winner_index = scores
        .iter()
        .enumerate()
        .max_by(|(ia, sa), (ib, sb)| sa.cmp(sb).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("validated non-empty");
    Ok(CopelandResult {
        winner_index,
        scores,
        judge_calls: outcomes.len(),
        outcomes,
    })
}

/// Scores every candidate once and returns (argmax, argmin), ties broken by
/// lowest index.
pub fn scoring_select<R: rand::Rng>(
    set: &CandidateSet,
    scorer: &Scorer,
    rng: &mut R,
) -> Result<(usize, usize)> {
    set.validate()?;
    let mut scores = Vec::with_capacity(set.len());
    for index in 0..set.len() {
        scores.push(scorer.score(&set.prompt_id, index, rng)?);
    }
    let mut best = 0usize;
    let mut worst = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
        if s < scores[worst] {
            worst = i;
        }
    }
    Ok((best, worst))
}

/// Everything build_pairs needs besides the data and the backends.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub strategy: Strategy,
    pub stop: StopRule,
    pub loser: LoserRule,
    /// Abort on the first per-set judge failure instead of recording it.
    pub fail_fast: bool,
    /// Base seed for per-set scoring noise.
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            strategy: Strategy::Ipr,
            stop: StopRule::Full,
            loser: LoserRule::InvertedIpr,
            fail_fast: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkipRecord {
    pub prompt_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetFailure {
    pub prompt_id: String,
    pub error: String,
}

/// Output of a pair-construction run, in input order.
#[derive(Debug, Default)]
pub struct BuildReport {
    pub pairs: Vec<PreferencePair>,
    pub traces: Vec<RankingTrace>,
    pub skipped: Vec<SkipRecord>,
    pub failures: Vec<SetFailure>,
}

enum SetResult {
    Built(Box<(PreferencePair, RankingTrace)>),
    Skipped(SkipRecord),
    Failed(SetFailure),
}

fn rank_one_set(
    prompt: &PromptRecord,
    set: &CandidateSet,
    judge: Option<&dyn Judge>,
    scorer: Option<&Scorer>,
    config: &BuildConfig,
    set_index: usize,
) -> Result<(usize, Option<usize>, RankingTrace)> {
    let need_judge = || {
        judge.ok_or_else(|| Error::Config(format!("strategy {} requires a judge", config.strategy)))
    };
    let need_scorer = || {
        scorer.ok_or_else(|| {
            Error::Config(format!(
                "strategy {} with loser rule scoring-argmin requires a scorer",
                config.strategy
            ))
        })
    };

    match config.strategy {
        Strategy::Ipr => {
            let judge = need_judge()?;
            let mut trace = ipr_select(&prompt.prompt, set, judge, config.stop)?;
            let loser = match config.loser {
                LoserRule::InvertedIpr => {
                    let loser_trace = ipr_select_loser(&prompt.prompt, set, judge, config.stop)?;
                    trace.outcomes.extend(loser_trace.outcomes);
                    trace.judge_calls += loser_trace.judge_calls;
                    loser_trace.winner_index
                }
                LoserRule::ScoringArgmin => {
                    let scorer = need_scorer()?;
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(exec::derive_seed(config.seed, set_index as u64));
                    scoring_select(set, scorer, &mut rng)?.1
                }
            };
            trace.loser_index = Some(loser);
            Ok((trace.winner_index, Some(loser), trace))
        }
        Strategy::Copeland => {
            let judge = need_judge()?;
            let winner = copeland_select(&prompt.prompt, set, judge)?;
            let inverted = InvertedJudge::new(judge);
            let loser = copeland_select(&prompt.prompt, set, &inverted)?;
            let mut outcomes = winner.outcomes;
            outcomes.extend(loser.outcomes);
            let trace = RankingTrace {
                prompt_id: set.prompt_id.clone(),
                judge_calls: winner.judge_calls + loser.judge_calls,
                outcomes,
                winner_index: winner.winner_index,
                loser_index: Some(loser.winner_index),
            };
            Ok((winner.winner_index, Some(loser.winner_index), trace))
        }
        Strategy::Scoring => {
            let scorer = scorer
                .ok_or_else(|| Error::Config("strategy scoring requires a scorer".to_string()))?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(exec::derive_seed(config.seed, set_index as u64));
            let (winner, loser) = scoring_select(set, scorer, &mut rng)?;
            let trace = RankingTrace {
                prompt_id: set.prompt_id.clone(),
                outcomes: Vec::new(),
                winner_index: winner,
                loser_index: Some(loser),
                judge_calls: 0,
            };
            Ok((winner, Some(loser), trace))
        }
    }
}

/// Builds one preference pair per candidate set.
///
/// Sets run concurrently (input order is preserved in the output); degenerate
/// sets where the winner equals the loser are skipped, and per-set judge
/// failures are recorded unless `fail_fast` is set.
pub fn build_pairs(
    prompts: &[PromptRecord],
    sets: &[CandidateSet],
    judge: Option<&dyn Judge>,
    scorer: Option<&Scorer>,
    config: &BuildConfig,
) -> Result<BuildReport> {
    let by_id: HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    for set in sets {
        if !by_id.contains_key(set.prompt_id.as_str()) {
            return Err(Error::UnresolvedPrompt(set.prompt_id.clone()));
        }
    }

    let results = exec::map_ordered(sets, |set_index, set| {
        let prompt = by_id[set.prompt_id.as_str()];
        match rank_one_set(prompt, set, judge, scorer, config, set_index) {
            Ok((winner, loser, trace)) => {
                let loser = loser.expect("every strategy selects a loser");
                if winner == loser {
                    return SetResult::Skipped(SkipRecord {
                        prompt_id: set.prompt_id.clone(),
                        reason: "degenerate: winner==loser".to_string(),
                    });
                }
                let preferred = set.candidates[winner].clone();
                let dispreferred = set.candidates[loser].clone();
                if preferred == dispreferred {
                    return SetResult::Skipped(SkipRecord {
                        prompt_id: set.prompt_id.clone(),
                        reason: "degenerate: preferred text equals dispreferred text".to_string(),
                    });
                }
                let pair = PreferencePair {
                    prompt_id: set.prompt_id.clone(),
                    prompt: prompt.prompt.clone(),
                    preferred,
                    dispreferred,
                    strategy: config.strategy,
                    trace_ref: Some(trace.clone()),
                };
                SetResult::Built(Box::new((pair, trace)))
            }
            Err(e) => SetResult::Failed(SetFailure {
                prompt_id: set.prompt_id.clone(),
                error: e.to_string(),
            }),
        }
    });

    let mut report = BuildReport::default();
    for result in results {
        match result {
            SetResult::Built(built) => {
                let (pair, trace) = *built;
                report.pairs.push(pair);
                report.traces.push(trace);
            }
            SetResult::Skipped(skip) => {
                log::info!("skipping {}: {}", skip.prompt_id, skip.reason);
                report.skipped.push(skip);
            }
            SetResult::Failed(failure) => {
                if config.fail_fast {
                    return Err(Error::Config(format!(
                        "set {} failed: {}",
                        failure.prompt_id, failure.error
                    )));
                }
                log::warn!("set {} failed: {}", failure.prompt_id, failure.error);
                report.failures.push(failure);
            }
        }
    }
    Ok(report)
}

/// Verdict counts at one tournament iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IterationCounts {
    pub ties: usize,
    pub candidate_wins: usize,
    pub baseline_wins: usize,
}

impl IterationCounts {
    pub fn total(&self) -> usize {
        self.ties + self.candidate_wins + self.baseline_wins
    }
}

/// Per-iteration verdict histogram over a batch of winner-selection traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationStats {
    /// Index k−1 holds the counts for iteration k.
    pub iterations: Vec<IterationCounts>,
    pub traces: usize,
}

impl IterationStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,ties,candidate_wins,baseline_wins\n");
        for (k, counts) in self.iterations.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                k + 1,
                counts.ties,
                counts.candidate_wins,
                counts.baseline_wins
            ));
        }
        out
    }
}

/// Length of the winner-selection phase of a trace: the leading run where
/// outcome i duels candidate i+1, which is the IPR chain structure. Traces
/// extended with an inverted loser tournament restart the chain, ending the
/// prefix.
fn winner_phase_len(trace: &RankingTrace) -> usize {
    trace
        .outcomes
        .iter()
        .enumerate()
        .take_while(|(i, o)| o.candidate_index == i + 1)
        .count()
}

/// Counts verdicts per iteration across Full-mode IPR traces of equal M.
pub fn tournament_stats(traces: &[RankingTrace]) -> Result<IterationStats> {
    if traces.is_empty() {
        return Err(Error::Config("no traces to aggregate".to_string()));
    }
    let phase_len = winner_phase_len(&traces[0]);
    if phase_len == 0 {
        return Err(Error::Config(
            "traces carry no tournament outcomes".to_string(),
        ));
    }
    let mut iterations = vec![IterationCounts::default(); phase_len];
    for trace in traces {
        if winner_phase_len(trace) != phase_len {
            return Err(Error::Config(format!(
                "mixed M: expected {} iterations, trace for {} has {}",
                phase_len,
                trace.prompt_id,
                winner_phase_len(trace)
            )));
        }
        for (counts, outcome) in iterations.iter_mut().zip(&trace.outcomes) {
            match outcome.verdict {
                Verdict::Tie => counts.ties += 1,
                Verdict::CandidateWins => counts.candidate_wins += 1,
                Verdict::BaselineWins => counts.baseline_wins += 1,
            }
        }
    }
    Ok(IterationStats {
        iterations,
        traces: traces.len(),
    })
}
