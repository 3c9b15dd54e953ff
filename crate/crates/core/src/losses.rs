//! Preference-optimization objectives with analytic gradients.
//!
//! Eight methods over per-example log-likelihoods. With
//! `w_ratio = lp_w_policy − lp_w_ref`, `l_ratio = lp_l_policy − lp_l_ref`,
//! and σ the logistic function:
//!
//! | method    | per-example loss                                                        |
//! |-----------|-------------------------------------------------------------------------|
//! | dpo       | −log σ(β·w_ratio − β·l_ratio)                                            |
//! | dpop      | −log σ(β·w_ratio − β·l_ratio − λ·max(0, −w_ratio))                       |
//! | dpo-bcr   | dpo + λ·max(0, −w_ratio − δ)                                             |
//! | ipo       | (w_ratio − l_ratio − 1/(2τ))²                                            |
//! | ipo-bcr   | ipo + λ·max(0, −w_ratio − δ)                                             |
//! | simpo     | −log σ(β·lp_w/|y_w| − β·lp_l/|y_l| − γ)                                  |
//! | simpo-bcr | simpo + λ·max(0, −lp_w/|y_w| − δ)                                        |
//! | cpo       | simpo − (λ/|y_w|)·lp_w                                                   |
//!
//! The BCR hinge sits outside the log-sigmoid; DPOP's hinge sits inside its
//! argument. Losses are mean-reduced over the batch, the hinge subgradient at
//! the kink is 0 (so the λ=0 and δ→∞ reductions are exact), and the SimPO
//! family never reads the reference log-probs. The squared IPO term is
//! implemented as a positive penalty so that minimization drives the
//! log-ratio gap toward 1/(2τ).
//!
//! The module never tokenizes: log-probs arrive as sums over tokens, lengths
//! as token counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::JsonlReader;
use crate::error::{Error, Result};

/// One training example's log-likelihoods and lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProbExample {
    /// log π_θ(y_w|x), summed over tokens.
    pub lp_w_policy: f64,
    pub lp_w_ref: f64,
    pub lp_l_policy: f64,
    pub lp_l_ref: f64,
    /// |y_w| in tokens.
    pub len_w: u32,
    pub len_l: u32,
}

impl LogProbExample {
    fn w_ratio(&self) -> f64 {
        self.lp_w_policy - self.lp_w_ref
    }

    fn l_ratio(&self) -> f64 {
        self.lp_l_policy - self.lp_l_ref
    }

    fn finite(&self) -> bool {
        self.lp_w_policy.is_finite()
            && self.lp_w_ref.is_finite()
            && self.lp_l_policy.is_finite()
            && self.lp_l_ref.is_finite()
    }
}

/// The sole input to every loss: a batch of per-example log-likelihoods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogProbBatch {
    pub examples: Vec<LogProbExample>,
}

impl LogProbBatch {
    pub fn new(examples: Vec<LogProbExample>) -> Self {
        LogProbBatch { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Schema invariants: log-probs ≤ 0 and finite, lengths ≥ 1.
    pub fn validate(&self) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if !ex.finite() {
                return Err(Error::InvalidRecord(format!(
                    "example {i}: non-finite log-prob"
                )));
            }
            for (name, lp) in [
                ("lp_w_policy", ex.lp_w_policy),
                ("lp_w_ref", ex.lp_w_ref),
                ("lp_l_policy", ex.lp_l_policy),
                ("lp_l_ref", ex.lp_l_ref),
            ] {
                if lp > 0.0 {
                    return Err(Error::InvalidRecord(format!(
                        "example {i}: {name} = {lp} is a positive log-prob"
                    )));
                }
            }
            if ex.len_w == 0 || ex.len_l == 0 {
                return Err(Error::InvalidRecord(format!(
                    "example {i}: completion lengths must be at least 1"
                )));
            }
        }
        Ok(())
    }
}

/// Reads one JSON object per line into a batch and validates it.
pub fn read_logprob_batch(path: impl AsRef<Path>) -> Result<LogProbBatch> {
    let reader: JsonlReader<LogProbExample> = JsonlReader::open(path)?;
    let examples = reader.collect::<Result<Vec<_>>>()?;
    let batch = LogProbBatch::new(examples);
    batch.validate()?;
    Ok(batch)
}

/// Objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dpo,
    Ipo,
    Simpo,
    Cpo,
    Dpop,
    DpoBcr,
    IpoBcr,
    SimpoBcr,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Dpo,
        Method::Ipo,
        Method::Simpo,
        Method::Cpo,
        Method::Dpop,
        Method::DpoBcr,
        Method::IpoBcr,
        Method::SimpoBcr,
    ];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Dpo => "dpo",
            Method::Ipo => "ipo",
            Method::Simpo => "simpo",
            Method::Cpo => "cpo",
            Method::Dpop => "dpop",
            Method::DpoBcr => "dpo-bcr",
            Method::IpoBcr => "ipo-bcr",
            Method::SimpoBcr => "simpo-bcr",
        };
        write!(f, "{name}")
    }
}

/// Objective selector plus hyperparameters. Only the fields a method reads
/// are required; validation rejects missing ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub method: Method,
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

impl LossConfig {
    pub fn new(method: Method) -> Self {
        LossConfig {
            method,
            beta: None,
            tau: None,
            gamma: None,
            lambda: None,
            delta: None,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    /// Checks presence and sign of every field the method reads.
    pub fn validate(&self) -> Result<Resolved> {
        let method = self.method;
        let require = |name: &str, value: Option<f64>| {
            value.ok_or_else(|| Error::Config(format!("{method} requires {name}")))
        };
        let positive = |name: &str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(Error::Config(format!(
                    "{method}: {name} must be positive and finite, got {value}"
                )))
            }
        };
        let non_negative = |name: &str, value: f64| {
            if value >= 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(Error::Config(format!(
                    "{method}: {name} must be non-negative and finite, got {value}"
                )))
            }
        };

        let mut resolved = Resolved::default();
        match method {
            Method::Dpo => {
                resolved.beta = positive("beta", require("beta", self.beta)?)?;
            }
            Method::Ipo => {
                resolved.tau = positive("tau", require("tau", self.tau)?)?;
            }
            Method::Simpo => {
                resolved.beta = positive("beta", require("beta", self.beta)?)?;
                resolved.gamma = non_negative("gamma", require("gamma", self.gamma)?)?;
            }
            Method::Cpo => {
                resolved.beta = positive("beta", require("beta", self.beta)?)?;
                resolved.gamma = non_negative("gamma", require("gamma", self.gamma)?)?;
                resolved.lambda = non_negative("lambda", require("lambda", self.lambda)?)?;
            }
            Method::Dpop => {
                resolved.beta = positive("beta", require("beta", self.beta)?)?;
                resolved.lambda = non_negative("lambda", require("lambda", self.lambda)?)?;
            }
            Method::DpoBcr => {
                resolved.beta = positive("beta", require("beta", self.beta)?)?;
                resolved.lambda = non_negative("lambda", require("lambda", self.lambda)?)?;
                resolved.delta = non_negative("delta", require("delta", self.delta)?)?;
            }
            Method::IpoBcr => {
                resolved.tau = positive("tau", require("tau", self.tau)?)?;
                resolved.lambda = non_negative("lambda", require("lambda", self.lambda)?)?;
                resolved.delta = non_negative("delta", require("delta", self.delta)?)?;
            }
            Method::SimpoBcr => {
                resolved.beta = positive("beta", require("beta", self.beta)?)?;
                resolved.gamma = non_negative("gamma", require("gamma", self.gamma)?)?;
                resolved.lambda = non_negative("lambda", require("lambda", self.lambda)?)?;
                resolved.delta = non_negative("delta", require("delta", self.delta)?)?;
            }
        }
        Ok(resolved)
    }
}

/// Hyperparameters after validation; fields a method does not read stay 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resolved {
    pub beta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// Batch-level diagnostics under the method's reward parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    /// Mean of r(x,y_w) − r(x,y_l).
    pub reward_margin: f64,
    /// Fraction with r(x,y_w) strictly greater than r(x,y_l); ties count as
    /// incorrect.
    pub reward_accuracy: f64,
    /// Mean policy log-likelihood of the preferred completions (the
    /// optimization budget).
    pub mean_lp_w: f64,
    /// Mean hinge value max(0, ·) of the method's regularizer, unscaled by λ.
    pub mean_hinge: f64,
}

/// Loss value, per-example gradients of the mean loss, and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// ∂loss/∂lp_w_policy per example (mean reduction included).
    pub grad_lp_w: Vec<f64>,
    /// ∂loss/∂lp_l_policy per example.
    pub grad_lp_l: Vec<f64>,
    pub metrics: BatchMetrics,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-example loss value, unreduced gradients, and hinge value.
struct ExampleEval {
    loss: f64,
    grad_w: f64,
    grad_l: f64,
    hinge: f64,
}

fn eval_example(method: Method, p: &Resolved, ex: &LogProbExample) -> ExampleEval {
    let len_w = f64::from(ex.len_w);
    let len_l = f64::from(ex.len_l);
    match method {
        Method::Dpo => {
            let margin = p.beta * ex.w_ratio() - p.beta * ex.l_ratio();
            let s = sigmoid(-margin);
            ExampleEval {
                loss: softplus(-margin),
                grad_w: -p.beta * s,
                grad_l: p.beta * s,
                hinge: 0.0,
            }
        }
        Method::Dpop => {
            let hinge = (-ex.w_ratio()).max(0.0);
            let mut arg = p.beta * ex.w_ratio() - p.beta * ex.l_ratio();
            let mut dw = p.beta;
            if p.lambda != 0.0 {
                arg -= p.lambda * hinge;
                if hinge > 0.0 {
                    dw += p.lambda;
                }
            }
            let s = sigmoid(-arg);
            ExampleEval {
                loss: softplus(-arg),
                grad_w: -s * dw,
                grad_l: p.beta * s,
                hinge,
            }
        }
        Method::DpoBcr => {
            let base = eval_example(Method::Dpo, p, ex);
            let hinge = (-ex.w_ratio() - p.delta).max(0.0);
            let mut loss = base.loss;
            let mut grad_w = base.grad_w;
            if p.lambda != 0.0 {
                loss += p.lambda * hinge;
                if hinge > 0.0 {
                    grad_w -= p.lambda;
                }
            }
            ExampleEval {
                loss,
                grad_w,
                grad_l: base.grad_l,
                hinge,
            }
        }
        Method::Ipo => {
            let gap = ex.w_ratio() - ex.l_ratio();
            let d = gap - 1.0 / (2.0 * p.tau);
            ExampleEval {
                loss: d * d,
                grad_w: 2.0 * d,
                grad_l: -2.0 * d,
                hinge: 0.0,
            }
        }
        Method::IpoBcr => {
            let base = eval_example(Method::Ipo, p, ex);
            let hinge = (-ex.w_ratio() - p.delta).max(0.0);
            let mut loss = base.loss;
            let mut grad_w = base.grad_w;
            if p.lambda != 0.0 {
                loss += p.lambda * hinge;
                if hinge > 0.0 {
                    grad_w -= p.lambda;
                }
            }
            ExampleEval {
                loss,
                grad_w,
                grad_l: base.grad_l,
                hinge,
            }
        }
        Method::Simpo => {
            let arg = p.beta * ex.lp_w_policy / len_w - p.beta * ex.lp_l_policy / len_l - p.gamma;
            let s = sigmoid(-arg);
            ExampleEval {
                loss: softplus(-arg),
                grad_w: -s * p.beta / len_w,
                grad_l: s * p.beta / len_l,
                hinge: 0.0,
            }
        }
        Method::SimpoBcr => {
            let base = eval_example(Method::Simpo, p, ex);
            let hinge = (-ex.lp_w_policy / len_w - p.delta).max(0.0);
            let mut loss = base.loss;
            let mut grad_w = base.grad_w;
            if p.lambda != 0.0 {
                loss += p.lambda * hinge;
                if hinge > 0.0 {
                    grad_w -= p.lambda / len_w;
                }
            }
            ExampleEval {
                loss,
                grad_w,
                grad_l: base.grad_l,
                hinge,
            }
        }
        Method::Cpo => {
            let base = eval_example(Method::Simpo, p, ex);
            let mut loss = base.loss;
            let mut grad_w = base.grad_w;
            if p.lambda != 0.0 {
                loss -= p.lambda / len_w * ex.lp_w_policy;
                grad_w -= p.lambda / len_w;
            }
            ExampleEval {
                loss,
                grad_w,
                grad_l: base.grad_l,
                hinge: 0.0,
            }
        }
    }
}

/// Reward of a completion under the method's parameterization: β-scaled
/// log-ratio for the DPO family, the raw log-ratio for IPO (which has no β),
/// and length-normalized β·lp/|y| for the SimPO family.
fn rewards(method: Method, p: &Resolved, ex: &LogProbExample) -> (f64, f64) {
    match method {
        Method::Dpo | Method::Dpop | Method::DpoBcr => {
            (p.beta * ex.w_ratio(), p.beta * ex.l_ratio())
        }
        Method::Ipo | Method::IpoBcr => (ex.w_ratio(), ex.l_ratio()),
        Method::Simpo | Method::SimpoBcr | Method::Cpo => (
            p.beta * ex.lp_w_policy / f64::from(ex.len_w),
            p.beta * ex.lp_l_policy / f64::from(ex.len_l),
        ),
    }
}

fn check_batch(batch: &LogProbBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".to_string()));
    }
    for (i, ex) in batch.examples.iter().enumerate() {
        if !ex.finite() {
            return Err(Error::InvalidRecord(format!(
                "example {i}: non-finite log-prob"
            )));
        }
        if ex.len_w == 0 || ex.len_l == 0 {
            return Err(Error::InvalidRecord(format!(
                "example {i}: zero completion length"
            )));
        }
    }
    Ok(())
}

/// Evaluates the configured objective: mean loss, analytic gradients with
/// respect to every policy log-prob, and batch metrics.
pub fn evaluate_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    let params = config.validate()?;
    check_batch(batch)?;

    let n = batch.len() as f64;
    let mut loss_sum = 0.0;
    let mut grad_lp_w = Vec::with_capacity(batch.len());
    let mut grad_lp_l = Vec::with_capacity(batch.len());
    let mut hinge_sum = 0.0;
    let mut margin_sum = 0.0;
    let mut correct = 0usize;
    let mut lp_w_sum = 0.0;

    for ex in &batch.examples {
        let eval = eval_example(config.method, &params, ex);
        loss_sum += eval.loss;
        grad_lp_w.push(eval.grad_w / n);
        grad_lp_l.push(eval.grad_l / n);
        hinge_sum += eval.hinge;

        let (rw, rl) = rewards(config.method, &params, ex);
        margin_sum += rw - rl;
        if rw > rl {
            correct += 1;
        }
        lp_w_sum += ex.lp_w_policy;
    }

    Ok(LossOutput {
        loss: loss_sum / n,
        grad_lp_w,
        grad_lp_l,
        metrics: BatchMetrics {
            reward_margin: margin_sum / n,
            reward_accuracy: correct as f64 / n,
            mean_lp_w: lp_w_sum / n,
            mean_hinge: hinge_sum / n,
        },
    })
}

fn with_method(config: &LossConfig, method: Method) -> LossConfig {
    LossConfig { method, ..*config }
}

pub fn dpo_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::Dpo))
}

pub fn dpop_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::Dpop))
}

pub fn dpo_bcr_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::DpoBcr))
}

pub fn ipo_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::Ipo))
}

pub fn ipo_bcr_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::IpoBcr))
}

pub fn simpo_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::Simpo))
}

pub fn simpo_bcr_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::SimpoBcr))
}

pub fn cpo_loss(batch: &LogProbBatch, config: &LossConfig) -> Result<LossOutput> {
    evaluate_loss(batch, &with_method(config, Method::Cpo))
}

/// Batch metrics alone.
pub fn compute_metrics(batch: &LogProbBatch, config: &LossConfig) -> Result<BatchMetrics> {
    evaluate_loss(batch, config).map(|out| out.metrics)
}

/// The hinge argument seen by the lp_w_policy coordinate of one example, if
/// the method has a hinge. Coordinates within 10h of the kink are excluded
/// from finite-difference comparison.
fn hinge_argument(method: Method, p: &Resolved, ex: &LogProbExample) -> Option<f64> {
    match method {
        Method::Dpop => Some(-ex.w_ratio()),
        Method::DpoBcr | Method::IpoBcr => Some(-ex.w_ratio() - p.delta),
        Method::SimpoBcr => Some(-ex.lp_w_policy / f64::from(ex.len_w) - p.delta),
        Method::Dpo | Method::Ipo | Method::Simpo | Method::Cpo => None,
    }
}

/// Relative tolerance finite differences are expected to resolve. A central
/// difference carries rounding noise of order ε·|loss|/h, so a gradient can
/// only be verified to this tolerance when its magnitude exceeds that noise
/// divided by the tolerance; smaller gradients (for example the σ-side
/// gradient of a loss dominated by its hinge or behavior-cloning term) are
/// indistinguishable from zero at the working precision and are skipped.
const FD_TARGET_RTOL: f64 = 1e-6;

/// Central-difference verification of the analytic gradients.
///
/// Perturbs every lp_w_policy and lp_l_policy coordinate by ±h, recomputes
/// that example's loss term (no other term depends on the coordinate, so
/// the batch-mean gradient is the difference divided by 2hn), and returns
/// the maximum relative error against the analytic gradient. Skipped
/// coordinates: |hinge argument| < 10h (subgradient ambiguity at the kink)
/// and gradients below the measurability floor of [`FD_TARGET_RTOL`].
/// `h` must lie in [1e-6, 1e-4].
pub fn finite_diff_check(batch: &LogProbBatch, config: &LossConfig, h: f64) -> Result<f64> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!(
            "h must lie in [1e-6, 1e-4], got {h}"
        )));
    }
    let params = config.validate()?;
    check_batch(batch)?;
    let analytic = evaluate_loss(batch, config)?;
    let n = batch.len() as f64;

    let mut max_rel: f64 = 0.0;
    let mut check = |plus: f64, minus: f64, an: f64| {
        let fd = (plus - minus) / (2.0 * h) / n;
        let noise = 4.0 * f64::EPSILON * (plus.abs() + minus.abs() + 1.0) / (2.0 * h) / n;
        let floor = noise / FD_TARGET_RTOL;
        if fd.abs().max(an.abs()) > floor {
            max_rel = max_rel.max((fd - an).abs() / fd.abs().max(an.abs()));
        }
    };

    for (i, ex) in batch.examples.iter().enumerate() {
        let near_kink = hinge_argument(config.method, &params, ex)
            .map(|arg| arg.abs() < 10.0 * h)
            .unwrap_or(false);
        if !near_kink {
            let mut plus = *ex;
            plus.lp_w_policy += h;
            let mut minus = *ex;
            minus.lp_w_policy -= h;
            check(
                eval_example(config.method, &params, &plus).loss,
                eval_example(config.method, &params, &minus).loss,
                analytic.grad_lp_w[i],
            );
        }

        let mut plus = *ex;
        plus.lp_l_policy += h;
        let mut minus = *ex;
        minus.lp_l_policy -= h;
        check(
            eval_example(config.method, &params, &plus).loss,
            eval_example(config.method, &params, &minus).loss,
            analytic.grad_lp_l[i],
        );
    }
    Ok(max_rel)
}
