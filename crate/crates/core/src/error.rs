//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// I/O failure, annotated with the path being touched.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSONL line failed to parse or violated the schema.
    #[error("{path}:{line}: {message}")]
    JsonLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Invalid configuration or argument.
    #[error("invalid config: {0}")]
    Config(String),

    /// A record violated a type invariant.
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    /// The latent reward table has no entry for the queried candidate.
    #[error("no reward entry for prompt {prompt_id:?} candidate {index}")]
    MissingReward { prompt_id: String, index: usize },

    /// A judge call failed; the offending duel is identified.
    #[error("judge failed on prompt {prompt_id:?} duel ({baseline_index} vs {candidate_index}): {source}")]
    Judge {
        prompt_id: String,
        baseline_index: usize,
        candidate_index: usize,
        #[source]
        source: Box<Error>,
    },

    /// No verdict tag (or an unrecognized one) in a judge completion.
    #[error("could not parse verdict from judge output: {raw:?}")]
    VerdictParse { raw: String },

    /// HTTP transport or protocol failure after exhausting retries.
    #[error("http judge request failed after {attempts} attempt(s): {message}")]
    Http { attempts: u32, message: String },

    /// A prompt id referenced by a candidate set does not exist.
    #[error("unresolved prompt id {0:?}")]
    UnresolvedPrompt(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json_line(
        path: impl Into<PathBuf>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::JsonLine {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
