//! Preference-dataset construction and budget-controlled preference optimization.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! 1. [`data`] — JSONL schemas for prompts, candidate completions, preference
//!    pairs, and ranking traces.
//! 2. [`judge`] — pluggable pairwise comparators: a deterministic simulated
//!    judge, a noisy scoring judge, and an HTTP LLM-judge client with caching
//!    and retry.
//! 3. [`ranking`] — tournament selection: iterative pairwise ranking (IPR),
//!    a Copeland round-robin oracle, and scoring-based argmax/argmin.
//! 4. [`losses`] — the preference objectives (DPO, IPO, SimPO, CPO, DPOP and
//!    the budget-controlled BCR variants) with analytic gradients.
//! 5. [`trainer`] — toy softmax-policy training that exposes the
//!    likelihood-reduction failure mode and the budget/performance sweep.
//! 6. [`evaluate`] — judge-agreement measurement over preference pairs.
//!
//! Data-parallel stages (pair construction, agreement evaluation, sweeps)
//! run on rayon when the default `parallel` feature is enabled and fall back
//! to sequential iteration without it; results are identical either way.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod judge;
pub mod losses;
pub mod ranking;
pub mod trainer;

pub use error::{Error, Result};
