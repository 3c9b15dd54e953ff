//! Desk-scale optimization of a toy softmax policy under any loss config.
//!
//! A [`ToyPolicy`] is one logit vector per prompt over a shared completion
//! vocabulary; each completion is a single atomic unit whose sequence
//! log-probability is its log-softmax entry. Training is full-batch and
//! deterministic: analytic loss gradients are chained through the exact
//! softmax Jacobian, so every run is reproducible from its seed.
//!
//! [`failure_mode_instance`] constructs the documented toy set on which DPO
//! drives the preferred completions' likelihood below its starting point
//! while reward accuracy climbs: each prompt carries the two pairs
//! (c0 ≻ c1) and (c1 ≻ c2), so c1 is simultaneously pushed up as a winner
//! and down as a loser and the probability mass the pairs share drains to
//! neither side. [`sweep`] retrains one policy per grid point and reports
//! the budget/winrate-proxy trade-off.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CandidateSet, PreferencePair, PromptRecord, Strategy};
use crate::error::{Error, Result};
use crate::exec;
use crate::judge::LatentRewardTable;
use crate::losses::{
    evaluate_loss, BatchMetrics, LogProbBatch, LogProbExample, LossConfig, Method,
};

/// Finite softmax distribution over a fixed completion vocabulary, one logit
/// row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    prompt_ids: Vec<String>,
    prompt_index: HashMap<String, usize>,
    vocab: Vec<String>,
    vocab_index: HashMap<String, usize>,
    logits: Vec<Vec<f64>>,
    /// Synthetic token length per vocabulary entry; 1 by default.
    lengths: Vec<u32>,
}

impl ToyPolicy {
    pub fn num_prompts(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    /// Overrides the synthetic completion lengths (for the length-normalized
    /// objectives). One entry per vocabulary item, each ≥ 1.
    pub fn set_lengths(&mut self, lengths: Vec<u32>) -> Result<()> {
        if lengths.len() != self.vocab.len() {
            return Err(Error::Config(format!(
                "expected {} lengths, got {}",
                self.vocab.len(),
                lengths.len()
            )));
        }
        if lengths.contains(&0) {
            return Err(Error::Config(
                "completion lengths must be at least 1".into(),
            ));
        }
        self.lengths = lengths;
        Ok(())
    }

    pub fn prompt_position(&self, prompt_id: &str) -> Option<usize> {
        self.prompt_index.get(prompt_id).copied()
    }

    pub fn completion_position(&self, text: &str) -> Option<usize> {
        self.vocab_index.get(text).copied()
    }

    /// Log-softmax of one prompt's logit row.
    pub fn log_softmax_row(&self, prompt: usize) -> Vec<f64> {
        log_softmax(&self.logits[prompt])
    }

    /// log π(completion v | prompt p).
    pub fn logprob(&self, prompt: usize, completion: usize) -> f64 {
        self.log_softmax_row(prompt)[completion]
    }

    /// Index of the most likely completion, ties to the lowest index.
    pub fn argmax_completion(&self, prompt: usize) -> usize {
        let row = &self.logits[prompt];
        let mut best = 0;
        for (i, &z) in row.iter().enumerate().skip(1) {
            if z > row[best] {
                best = i;
            }
        }
        best
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - log_norm).collect()
}

/// Fresh policy with standard-normal logits plus its frozen reference copy.
pub fn init_toy(
    num_prompts: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<(ToyPolicy, ToyPolicy)> {
    if vocab_size < 2 {
        return Err(Error::Config(format!(
            "vocabulary must have at least 2 completions, got {vocab_size}"
        )));
    }
    if num_prompts == 0 {
        return Err(Error::Config("need at least one prompt".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let prompt_ids: Vec<String> = (0..num_prompts).map(|i| format!("p{i}")).collect();
    let vocab: Vec<String> = (0..vocab_size).map(|v| format!("c{v}")).collect();
    let logits: Vec<Vec<f64>> = (0..num_prompts)
        .map(|_| (0..vocab_size).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let policy = ToyPolicy {
        prompt_index: prompt_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect(),
        vocab_index: vocab
            .iter()
            .enumerate()
            .map(|(v, text)| (text.clone(), v))
            .collect(),
        prompt_ids,
        vocab,
        logits,
        lengths: vec![1; vocab_size],
    };
    let reference = policy.clone();
    Ok((policy, reference))
}

/// Pair resolved to (prompt row, preferred column, dispreferred column).
fn resolve_pairs(
    policy: &ToyPolicy,
    pairs: &[PreferencePair],
) -> Result<Vec<(usize, usize, usize)>> {
    pairs
        .iter()
        .map(|pair| {
            let p = policy
                .prompt_position(&pair.prompt_id)
                .ok_or_else(|| Error::UnresolvedPrompt(pair.prompt_id.clone()))?;
            let w = policy.completion_position(&pair.preferred).ok_or_else(|| {
                Error::Config(format!(
                    "completion {:?} is not in the vocabulary",
                    pair.preferred
                ))
            })?;
            let l = policy
                .completion_position(&pair.dispreferred)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "completion {:?} is not in the vocabulary",
                        pair.dispreferred
                    ))
                })?;
            Ok((p, w, l))
        })
        .collect()
}

/// Exact log-softmax evaluation of every pair under policy and reference.
pub fn batch_logprobs(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[PreferencePair],
) -> Result<LogProbBatch> {
    let resolved = resolve_pairs(policy, pairs)?;
    let policy_rows: Vec<Vec<f64>> = (0..policy.num_prompts())
        .map(|p| policy.log_softmax_row(p))
        .collect();
    let reference_rows: Vec<Vec<f64>> = (0..reference.num_prompts())
        .map(|p| reference.log_softmax_row(p))
        .collect();
    Ok(assemble_batch(
        policy,
        &policy_rows,
        &reference_rows,
        &resolved,
    ))
}

fn assemble_batch(
    policy: &ToyPolicy,
    policy_rows: &[Vec<f64>],
    reference_rows: &[Vec<f64>],
    resolved: &[(usize, usize, usize)],
) -> LogProbBatch {
    let examples = resolved
        .iter()
        .map(|&(p, w, l)| LogProbExample {
            lp_w_policy: policy_rows[p][w],
            lp_w_ref: reference_rows[p][w],
            lp_l_policy: policy_rows[p][l],
            lp_l_ref: reference_rows[p][l],
            len_w: policy.lengths[w],
            len_l: policy.lengths[l],
        })
        .collect();
    LogProbBatch::new(examples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    /// β1 = 0.9, β2 = 0.999, eps = 1e-8.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup for `warmup_frac` of the run, cosine decay after.
    CosineWarmup {
        warmup_frac: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> Self {
        TrainConfig {
            loss,
            learning_rate: 0.05,
            steps: 100,
            seed: 0,
            optimizer: Optimizer::Adam,
            schedule: LrSchedule::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if let LrSchedule::CosineWarmup { warmup_frac } = self.schedule {
            if !(0.0..=1.0).contains(&warmup_frac) {
                return Err(Error::Config(format!(
                    "warmup_frac must lie in [0, 1], got {warmup_frac}"
                )));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::CosineWarmup { warmup_frac } => {
                let warmup = ((self.steps as f64 * warmup_frac).ceil() as usize).max(1);
                if step <= warmup {
                    self.learning_rate * step as f64 / warmup as f64
                } else if self.steps == warmup {
                    self.learning_rate
                } else {
                    let progress = (step - warmup) as f64 / (self.steps - warmup) as f64;
                    self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

/// Metrics at one logged step; step 0 is the untouched initial policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub metrics: BatchMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub final_policy: ToyPolicy,
}

impl TrainLog {
    pub fn initial(&self) -> &StepLog {
        self.steps.first().expect("train logs step 0")
    }

    pub fn last(&self) -> &StepLog {
        self.steps.last().expect("train logs at least step 0")
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("step,loss,reward_margin,reward_accuracy,mean_lp_w,mean_hinge\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.step,
                s.loss,
                s.metrics.reward_margin,
                s.metrics.reward_accuracy,
                s.metrics.mean_lp_w,
                s.metrics.mean_hinge
            ));
        }
        out
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Gradient of the composed loss with respect to every logit, via the exact
/// softmax Jacobian: ∂ log softmax(z)[y] / ∂ z[v] = 1{v = y} − softmax(z)[v].
fn logit_gradients(
    policy: &ToyPolicy,
    policy_rows: &[Vec<f64>],
    resolved: &[(usize, usize, usize)],
    grad_lp_w: &[f64],
    grad_lp_l: &[f64],
) -> Vec<Vec<f64>> {
    let v_size = policy.vocab_size();
    let mut grads = vec![vec![0.0; v_size]; policy.num_prompts()];
    let probs: Vec<Vec<f64>> = policy_rows
        .iter()
        .map(|row| row.iter().map(|&lp| lp.exp()).collect())
        .collect();
    for (i, &(p, w, l)) in resolved.iter().enumerate() {
        let gw = grad_lp_w[i];
        let gl = grad_lp_l[i];
        grads[p][w] += gw;
        grads[p][l] += gl;
        let total = gw + gl;
        for v in 0..v_size {
            grads[p][v] -= total * probs[p][v];
        }
    }
    grads
}

/// Full-batch deterministic training. Logs step 0 (initial state) through
/// step `steps` (final state) inclusive.
pub fn train(
    initial: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[PreferencePair],
    config: &TrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to train on".into()));
    }
    let mut policy = initial.clone();
    let resolved = resolve_pairs(&policy, pairs)?;
    let reference_rows: Vec<Vec<f64>> = (0..reference.num_prompts())
        .map(|p| reference.log_softmax_row(p))
        .collect();

    let mut log = Vec::with_capacity(config.steps + 1);
    let mut adam = AdamState {
        m: vec![vec![0.0; policy.vocab_size()]; policy.num_prompts()],
        v: vec![vec![0.0; policy.vocab_size()]; policy.num_prompts()],
        t: 0,
    };

    for step in 0..=config.steps {
        let policy_rows: Vec<Vec<f64>> = (0..policy.num_prompts())
            .map(|p| policy.log_softmax_row(p))
            .collect();
        let batch = assemble_batch(&policy, &policy_rows, &reference_rows, &resolved);
        let out = evaluate_loss(&batch, &config.loss).map_err(|e| Error::NonFinite {
            step,
            detail: format!("loss evaluation failed: {e}"),
        })?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("loss = {}; mean_lp_w = {}", out.loss, out.metrics.mean_lp_w),
            });
        }
        log.push(StepLog {
            step,
            loss: out.loss,
            metrics: out.metrics,
        });
        if step == config.steps {
            break;
        }

        let grads = logit_gradients(
            &policy,
            &policy_rows,
            &resolved,
            &out.grad_lp_w,
            &out.grad_lp_l,
        );
        let lr = config.lr_at(step + 1);
        match config.optimizer {
            Optimizer::Sgd => {
                for (row, grow) in policy.logits.iter_mut().zip(&grads) {
                    for (theta, &g) in row.iter_mut().zip(grow) {
                        *theta -= lr * g;
                    }
                }
            }
            Optimizer::Adam => {
                adam.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
                for (p, grow) in grads.iter().enumerate() {
                    for (v, &g) in grow.iter().enumerate() {
                        adam.m[p][v] = ADAM_BETA1 * adam.m[p][v] + (1.0 - ADAM_BETA1) * g;
                        adam.v[p][v] = ADAM_BETA2 * adam.v[p][v] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = adam.m[p][v] / bc1;
                        let v_hat = adam.v[p][v] / bc2;
                        policy.logits[p][v] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }

    Ok(TrainLog {
        steps: log,
        final_policy: policy,
    })
}

/// The documented failure-mode toy set: V = 3, and per prompt the two pairs
/// (c0 ≻ c1) and (c1 ≻ c2).
pub struct ToyInstance {
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub pairs: Vec<PreferencePair>,
}

pub fn failure_mode_instance(num_prompts: usize, seed: u64) -> Result<ToyInstance> {
    let (policy, reference) = init_toy(num_prompts, 3, seed)?;
    let mut pairs = Vec::with_capacity(2 * num_prompts);
    for prompt_id in policy.prompt_ids() {
        for (w, l) in [(0usize, 1usize), (1, 2)] {
            pairs.push(PreferencePair {
                prompt_id: prompt_id.clone(),
                prompt: format!("toy question {prompt_id}"),
                preferred: policy.vocab()[w].clone(),
                dispreferred: policy.vocab()[l].clone(),
                strategy: Strategy::Scoring,
                trace_ref: None,
            });
        }
    }
    Ok(ToyInstance {
        policy,
        reference,
        pairs,
    })
}

/// Toy universe for sweeps: a policy, its frozen reference, latent rewards
/// for every (prompt, completion) cell, and the matching prompt/candidate
/// records.
pub struct ToyWorld {
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub rewards: LatentRewardTable,
    pub prompts: Vec<PromptRecord>,
    pub candidate_sets: Vec<CandidateSet>,
}

pub fn generate_world(num_prompts: usize, vocab_size: usize, seed: u64) -> Result<ToyWorld> {
    let (policy, reference) = init_toy(num_prompts, vocab_size, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, 0x7265_7761_7264)); // "reward"
    let rewards = LatentRewardTable::random(policy.prompt_ids(), vocab_size, 0.0, &mut rng)?;
    let prompts: Vec<PromptRecord> = policy
        .prompt_ids()
        .iter()
        .map(|id| PromptRecord {
            id: id.clone(),
            prompt: format!("toy question {id}"),
        })
        .collect();
    let candidate_sets: Vec<CandidateSet> = policy
        .prompt_ids()
        .iter()
        .map(|id| CandidateSet {
            prompt_id: id.clone(),
            candidates: policy.vocab().to_vec(),
        })
        .collect();
    Ok(ToyWorld {
        policy,
        reference,
        rewards,
        prompts,
        candidate_sets,
    })
}

/// Fraction of prompts where the trained policy's argmax completion carries a
/// strictly higher latent reward than the reference policy's argmax.
///
/// The toy policy is tabular, so a disjoint-prompt holdout would never move;
/// the held-out signal here is the latent reward, which no loss ever reads.
pub fn winrate_proxy(
    trained: &ToyPolicy,
    reference: &ToyPolicy,
    rewards: &LatentRewardTable,
    prompt_ids: &[String],
) -> Result<f64> {
    if prompt_ids.is_empty() {
        return Err(Error::Config("no prompts to evaluate".into()));
    }
    let mut wins = 0usize;
    for id in prompt_ids {
        let p_trained = trained
            .prompt_position(id)
            .ok_or_else(|| Error::UnresolvedPrompt(id.clone()))?;
        let p_ref = reference
            .prompt_position(id)
            .ok_or_else(|| Error::UnresolvedPrompt(id.clone()))?;
        let trained_reward = rewards.reward(id, trained.argmax_completion(p_trained))?;
        let reference_reward = rewards.reward(id, reference.argmax_completion(p_ref))?;
        if trained_reward > reference_reward {
            wins += 1;
        }
    }
    Ok(wins as f64 / prompt_ids.len() as f64)
}

/// One grid point: every field overrides the base configuration when set.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl SweepPoint {
    fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut config = *base;
        if let Some(method) = self.method {
            config.loss.method = method;
        }
        if let Some(lr) = self.learning_rate {
            config.learning_rate = lr;
        }
        if let Some(steps) = self.steps {
            config.steps = steps;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.beta.is_some() {
            config.loss.beta = self.beta;
        }
        if self.tau.is_some() {
            config.loss.tau = self.tau;
        }
        if self.gamma.is_some() {
            config.loss.gamma = self.gamma;
        }
        if self.lambda.is_some() {
            config.loss.lambda = self.lambda;
        }
        if self.delta.is_some() {
            config.loss.delta = self.delta;
        }
        config
    }
}

/// One sweep outcome row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub method: Method,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    /// Final mean policy log-likelihood of preferred completions (the
    /// optimization budget).
    pub final_mean_lp_w: Option<f64>,
    pub winrate_proxy: Option<f64>,
    pub final_reward_accuracy: Option<f64>,
    pub final_mean_hinge: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn csv_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "index,method,learning_rate,steps,seed,beta,tau,gamma,lambda,delta,\
             final_mean_lp_w,winrate_proxy,final_reward_accuracy,final_mean_hinge,status\n",
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.index,
                row.method,
                row.learning_rate,
                row.steps,
                row.seed,
                csv_opt(row.beta),
                csv_opt(row.tau),
                csv_opt(row.gamma),
                csv_opt(row.lambda),
                csv_opt(row.delta),
                csv_opt(row.final_mean_lp_w),
                csv_opt(row.winrate_proxy),
                csv_opt(row.final_reward_accuracy),
                csv_opt(row.final_mean_hinge),
                row.status
            ));
        }
        out
    }
}

/// Trains one model per grid point (points run in parallel, rows emitted in
/// grid order) and reports the final budget and winrate proxy per point.
/// Individual run failures become `status` entries; the sweep continues.
pub fn sweep(
    world: &ToyWorld,
    pairs: &[PreferencePair],
    base: &TrainConfig,
    points: &[SweepPoint],
) -> Result<SweepResult> {
    if points.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let rows = exec::map_ordered(points, |index, point| {
        let config = point.apply(base);
        let mut row = SweepRow {
            index,
            method: config.loss.method,
            learning_rate: config.learning_rate,
            steps: config.steps,
            seed: config.seed,
            beta: config.loss.beta,
            tau: config.loss.tau,
            gamma: config.loss.gamma,
            lambda: config.loss.lambda,
            delta: config.loss.delta,
            final_mean_lp_w: None,
            winrate_proxy: None,
            final_reward_accuracy: None,
            final_mean_hinge: None,
            status: "ok".to_string(),
        };
        let outcome = train(&world.policy, &world.reference, pairs, &config).and_then(|log| {
            let proxy = winrate_proxy(
                &log.final_policy,
                &world.reference,
                &world.rewards,
                world.policy.prompt_ids(),
            )?;
            Ok((log, proxy))
        });
        match outcome {
            Ok((log, proxy)) => {
                let last = log.last();
                row.final_mean_lp_w = Some(last.metrics.mean_lp_w);
                row.winrate_proxy = Some(proxy);
                row.final_reward_accuracy = Some(last.metrics.reward_accuracy);
                row.final_mean_hinge = Some(last.metrics.mean_hinge);
            }
            Err(e) => {
                row.status = format!("error: {}", e.to_string().replace(',', ";"));
            }
        }
        row
    });
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dpo_config(beta: f64) -> LossConfig {
        LossConfig::new(Method::Dpo).with_beta(beta)
    }

    #[test]
    fn same_seed_gives_identical_policies() {
        let (a, _) = init_toy(4, 5, 99).unwrap();
        let (b, _) = init_toy(4, 5, 99).unwrap();
        assert_eq!(a, b);
        let (c, _) = init_toy(4, 5, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reference_is_an_exact_copy_at_init() {
        let (policy, reference) = init_toy(3, 4, 7).unwrap();
        for p in 0..3 {
            for v in 0..4 {
                assert_eq!(policy.logprob(p, v), reference.logprob(p, v));
            }
        }
    }

    #[test]
    fn initial_dpo_loss_is_ln_two() {
        let instance = failure_mode_instance(4, 3).unwrap();
        let batch = batch_logprobs(&instance.policy, &instance.reference, &instance.pairs).unwrap();
        let out = evaluate_loss(&batch, &dpo_config(0.1)).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_uniform_log_probs() {
        let (mut policy, reference) = init_toy(1, 4, 0).unwrap();
        policy.logits[0] = vec![0.3; 4];
        let expected = -(4.0f64).ln();
        for v in 0..4 {
            assert!((policy.logprob(0, v) - expected).abs() < 1e-15);
        }
        drop(reference);
    }

    #[test]
    fn log_probs_normalize() {
        let (policy, _) = init_toy(6, 7, 21).unwrap();
        for p in 0..6 {
            let total: f64 = policy.log_softmax_row(p).iter().map(|lp| lp.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_direct_recomputation() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..5).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let lps = log_softmax(&logits);
            let norm: f64 = logits.iter().map(|z| z.exp()).sum();
            for (lp, z) in lps.iter().zip(&logits) {
                let direct = (z.exp() / norm).ln();
                assert!((lp - direct).abs() < 1e-9, "{lp} vs {direct}");
            }
        }
    }

    #[test]
    fn unknown_completion_is_an_error() {
        let instance = failure_mode_instance(1, 0).unwrap();
        let mut pairs = instance.pairs.clone();
        pairs[0].preferred = "not-in-vocab".into();
        assert!(batch_logprobs(&instance.policy, &instance.reference, &pairs).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_the_policy_fixed() {
        let instance = failure_mode_instance(2, 5).unwrap();
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let config = TrainConfig {
                learning_rate: 0.0,
                steps: 10,
                optimizer,
                ..TrainConfig::new(dpo_config(0.1))
            };
            let log = train(
                &instance.policy,
                &instance.reference,
                &instance.pairs,
                &config,
            )
            .unwrap();
            assert_eq!(log.final_policy.logits(), instance.policy.logits());
        }
    }

    #[test]
    fn one_sgd_step_matches_the_hand_computed_update() {
        // One prompt, V = 2, one pair (c0 > c1), uniform logits.
        let (mut policy, _) = init_toy(1, 2, 0).unwrap();
        policy.logits[0] = vec![0.0, 0.0];
        let reference = policy.clone();
        let pairs = vec![PreferencePair {
            prompt_id: "p0".into(),
            prompt: "q".into(),
            preferred: "c0".into(),
            dispreferred: "c1".into(),
            strategy: Strategy::Scoring,
            trace_ref: None,
        }];
        let beta = 0.1;
        let lr = 0.5;
        let config = TrainConfig {
            learning_rate: lr,
            steps: 1,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::new(dpo_config(beta))
        };
        let log = train(&policy, &reference, &pairs, &config).unwrap();

        // By hand: margin 0, sigma(0) = 1/2, so d loss/d lp_w = -beta/2 and
        // d loss/d lp_l = +beta/2 (n = 1). Through the softmax Jacobian with
        // p = (1/2, 1/2):
        //   d loss/d z0 = -beta/2 (1 - 1/2) + beta/2 (0 - 1/2) = -beta/2
        //   d loss/d z1 = +beta/2 (1 - 1/2) - beta/2 (0 - 1/2) = +beta/2
        // SGD: z0 <- 0 + lr*beta/2, z1 <- 0 - lr*beta/2.
        let expected = lr * beta / 2.0;
        let got = &log.final_policy.logits()[0];
        assert!((got[0] - expected).abs() < 1e-15, "{got:?}");
        assert!((got[1] + expected).abs() < 1e-15, "{got:?}");
    }

    #[test]
    fn training_step_matches_finite_differences_through_the_softmax() {
        use rand::Rng;
        let mut instance = failure_mode_instance(3, 11).unwrap();
        // Nudge the policy off the reference so no example sits exactly on a
        // hinge kink (at init every w_ratio is 0, DPOP's kink).
        let mut nudge_rng = ChaCha8Rng::seed_from_u64(1234);
        for row in &mut instance.policy.logits {
            for z in row.iter_mut() {
                *z += nudge_rng.gen_range(-0.5..0.5);
            }
        }
        let configs = [
            dpo_config(0.1),
            LossConfig::new(Method::Dpop)
                .with_beta(0.1)
                .with_lambda(5.0),
            LossConfig::new(Method::DpoBcr)
                .with_beta(0.1)
                .with_lambda(1.0)
                .with_delta(2.0),
            LossConfig::new(Method::Simpo)
                .with_beta(2.5)
                .with_gamma(0.5),
        ];
        for loss_config in configs {
            let policy = instance.policy.clone();
            let reference = &instance.reference;
            let resolved = resolve_pairs(&policy, &instance.pairs).unwrap();
            let reference_rows: Vec<Vec<f64>> = (0..reference.num_prompts())
                .map(|p| reference.log_softmax_row(p))
                .collect();

            let composed = |logits: &[Vec<f64>]| -> f64 {
                let rows: Vec<Vec<f64>> = logits.iter().map(|r| log_softmax(r)).collect();
                let mut probe = policy.clone();
                probe.logits = logits.to_vec();
                let batch = assemble_batch(&probe, &rows, &reference_rows, &resolved);
                evaluate_loss(&batch, &loss_config).unwrap().loss
            };

            let policy_rows: Vec<Vec<f64>> = (0..policy.num_prompts())
                .map(|p| policy.log_softmax_row(p))
                .collect();
            let batch = assemble_batch(&policy, &policy_rows, &reference_rows, &resolved);
            let out = evaluate_loss(&batch, &loss_config).unwrap();
            let analytic = logit_gradients(
                &policy,
                &policy_rows,
                &resolved,
                &out.grad_lp_w,
                &out.grad_lp_l,
            );

            let h = 1e-6;
            for p in 0..policy.num_prompts() {
                for v in 0..policy.vocab_size() {
                    let mut plus = policy.logits().to_vec();
                    plus[p][v] += h;
                    let mut minus = policy.logits().to_vec();
                    minus[p][v] -= h;
                    let fd = (composed(&plus) - composed(&minus)) / (2.0 * h);
                    let a = analytic[p][v];
                    let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
                    assert!(
                        rel < 1e-5,
                        "method {:?} logit ({p},{v}): fd {fd} vs {a}",
                        loss_config.method
                    );
                }
            }
        }
    }

    #[test]
    fn dpo_reaches_full_accuracy_on_separable_pairs() {
        // Distinct winners per prompt, no shared mass: plain DPO separates.
        let (policy, reference) = init_toy(4, 3, 17).unwrap();
        let pairs: Vec<PreferencePair> = policy
            .prompt_ids()
            .iter()
            .map(|id| PreferencePair {
                prompt_id: id.clone(),
                prompt: "q".into(),
                preferred: "c0".into(),
                dispreferred: "c2".into(),
                strategy: Strategy::Scoring,
                trace_ref: None,
            })
            .collect();
        let config = TrainConfig {
            steps: 300,
            learning_rate: 0.05,
            ..TrainConfig::new(dpo_config(0.1))
        };
        let log = train(&policy, &reference, &pairs, &config).unwrap();
        assert_eq!(log.last().metrics.reward_accuracy, 1.0);
    }

    #[test]
    fn bitwise_reduction_dpo_bcr_lambda_zero_equals_dpo() {
        let instance = failure_mode_instance(3, 29).unwrap();
        let bcr = TrainConfig {
            steps: 50,
            ..TrainConfig::new(
                LossConfig::new(Method::DpoBcr)
                    .with_beta(0.1)
                    .with_lambda(0.0)
                    .with_delta(1.0),
            )
        };
        let dpo = TrainConfig {
            steps: 50,
            ..TrainConfig::new(dpo_config(0.1))
        };
        let log_bcr = train(&instance.policy, &instance.reference, &instance.pairs, &bcr).unwrap();
        let log_dpo = train(&instance.policy, &instance.reference, &instance.pairs, &dpo).unwrap();
        assert_eq!(log_bcr.final_policy.logits(), log_dpo.final_policy.logits());
        let losses_bcr: Vec<f64> = log_bcr.steps.iter().map(|s| s.loss).collect();
        let losses_dpo: Vec<f64> = log_dpo.steps.iter().map(|s| s.loss).collect();
        assert_eq!(losses_bcr, losses_dpo);
    }

    #[test]
    fn train_log_csv_has_one_row_per_step() {
        let instance = failure_mode_instance(2, 1).unwrap();
        let config = TrainConfig {
            steps: 5,
            ..TrainConfig::new(dpo_config(0.1))
        };
        let log = train(
            &instance.policy,
            &instance.reference,
            &instance.pairs,
            &config,
        )
        .unwrap();
        let csv = log.to_csv();
        assert_eq!(csv.lines().count(), 1 + 6); // header + steps 0..=5
        assert!(csv.starts_with("step,loss,"));
    }

    #[test]
    fn cosine_schedule_warms_up_and_decays() {
        let config = TrainConfig {
            steps: 100,
            learning_rate: 1.0,
            schedule: LrSchedule::CosineWarmup { warmup_frac: 0.1 },
            ..TrainConfig::new(dpo_config(0.1))
        };
        assert!((config.lr_at(5) - 0.5).abs() < 1e-12);
        assert!((config.lr_at(10) - 1.0).abs() < 1e-12);
        assert!(config.lr_at(100) < 1e-12);
        assert!(config.lr_at(55) < 1.0);
    }

    #[test]
    fn synthetic_lengths_feed_the_length_normalized_objectives() {
        let instance = failure_mode_instance(2, 13).unwrap();
        let mut long = instance.policy.clone();
        long.set_lengths(vec![4, 2, 8]).unwrap();
        assert!(long.set_lengths(vec![1, 0, 1]).is_err());
        assert!(long.set_lengths(vec![1, 1]).is_err());

        let unit = batch_logprobs(&instance.policy, &instance.reference, &instance.pairs).unwrap();
        let scaled = batch_logprobs(&long, &instance.reference, &instance.pairs).unwrap();
        assert_eq!(scaled.examples[0].len_w, 4);
        assert_eq!(scaled.examples[0].len_l, 2);

        let cfg = LossConfig::new(Method::Simpo)
            .with_beta(2.5)
            .with_gamma(0.5);
        let a = evaluate_loss(&unit, &cfg).unwrap();
        let b = evaluate_loss(&scaled, &cfg).unwrap();
        assert_ne!(a.loss, b.loss, "length normalization must matter for SimPO");

        // DPO ignores lengths entirely.
        let cfg = LossConfig::new(Method::Dpo).with_beta(0.1);
        let a = evaluate_loss(&unit, &cfg).unwrap();
        let b = evaluate_loss(&scaled, &cfg).unwrap();
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn sweep_single_point_emits_single_row() {
        let world = generate_world(4, 3, 5).unwrap();
        let pairs = failure_mode_instance(4, 5).unwrap().pairs;
        let base = TrainConfig {
            steps: 20,
            ..TrainConfig::new(dpo_config(0.1))
        };
        let result = sweep(&world, &pairs, &base, &[SweepPoint::default()]).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.rows[0].status, "ok");
        assert!(result.rows[0].final_mean_lp_w.is_some());
        assert!(result.rows[0].winrate_proxy.is_some());
    }

    #[test]
    fn sweep_is_reproducible_and_records_failures() {
        let world = generate_world(4, 3, 9).unwrap();
        let pairs = failure_mode_instance(4, 9).unwrap().pairs;
        let base = TrainConfig {
            steps: 15,
            ..TrainConfig::new(dpo_config(0.1))
        };
        let points = vec![
            SweepPoint::default(),
            SweepPoint {
                learning_rate: Some(0.01),
                ..SweepPoint::default()
            },
            // Missing delta: this point fails validation and is recorded.
            SweepPoint {
                method: Some(Method::DpoBcr),
                lambda: Some(1.0),
                ..SweepPoint::default()
            },
        ];
        let a = sweep(&world, &pairs, &base, &points).unwrap();
        let b = sweep(&world, &pairs, &base, &points).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.rows[2].status.starts_with("error:"));
        assert_eq!(a.rows.len(), 3);
    }
}
