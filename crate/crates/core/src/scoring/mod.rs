//! Necessity scoring.
//!
//! A [`Scorer`] turns a sample into the log-probabilities of its response
//! tokens, each conditioned on everything before it in the conversation.
//! [`necessity_score`] reduces that list to one number under the configured
//! orientation.

mod file;
mod ngram;

use rayon::prelude::*;
use thiserror::Error;

use crate::config::Orientation;
use crate::parallel::with_jobs;
use crate::sample::{Sample, ScoredSample};

pub use file::{load_scores, read_score_file, write_scores, ScoreHeader};
pub use ngram::{NgramScorer, DEFAULT_ORDER, END_SYMBOL, MAX_ORDER, VOCAB_SIZE};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("token log-probability list is empty")]
    NoTokens,
    #[error("token log-probability at position {index} is invalid ({value}); must be finite and <= 0")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("sample {0:?} has no response turn to score")]
    NoResponse(String),
    #[error("scoring sample {id:?}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<ScoreError>,
    },
    #[error("cannot train a scorer on an empty seed set")]
    EmptySeedSet,
    #[error("n-gram order must be in 1..={max}, got {order}", max = MAX_ORDER)]
    BadOrder { order: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("score file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("score file has no header row")]
    MissingHeader,
    #[error("score file orientation is {found} but the configuration expects {expected}")]
    OrientationMismatch { found: Orientation, expected: Orientation },
    #[error("score file length_norm is {found} but the configuration expects {expected}")]
    LengthNormMismatch { found: bool, expected: bool },
    #[error("score file line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("score file contains {} id(s) absent from the pool: {}", .0.len(), preview(.0))]
    Orphans(Vec<String>),
    #[error("score file is missing {} candidate id(s): {}", .0.len(), preview(.0))]
    MissingIds(Vec<String>),
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).map(|i| format!("{i:?}")).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    s
}

/// Reduces response-token log-probabilities to a necessity score.
///
/// `Nll` yields `-sum(logprobs)`, `Loglik` yields `sum(logprobs)`; with
/// `length_norm` the sum is divided by the token count.
pub fn necessity_score(token_logprobs: &[f64], orientation: Orientation, length_norm: bool) -> Result<f64, ScoreError> {
    if token_logprobs.is_empty() {
        return Err(ScoreError::NoTokens);
    }
    if let Some((index, &value)) = token_logprobs.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v <= 0.0)) {
        return Err(ScoreError::InvalidLogprob { index, value });
    }
    let mut total: f64 = token_logprobs.iter().sum();
    if length_norm {
        total /= token_logprobs.len() as f64;
    }
    Ok(match orientation {
        Orientation::Loglik => total,
        Orientation::Nll => -total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    pub orientation: Orientation,
    pub length_norm: bool,
}

/// Anything that can produce per-token response log-probabilities.
pub trait Scorer: Send + Sync {
    /// Stable identifier recorded in score-file headers and manifests.
    fn descriptor(&self) -> String;

    /// Log-probabilities of every response token of `sample`, in order.
    fn response_logprobs(&self, sample: &Sample) -> Result<Vec<f64>, ScoreError>;
}

pub fn score_sample(scorer: &dyn Scorer, sample: &Sample, opts: ScoreOptions) -> Result<ScoredSample, ScoreError> {
    let wrap = |source: ScoreError| ScoreError::Sample { id: sample.id.clone(), source: Box::new(source) };
    let logprobs = scorer.response_logprobs(sample).map_err(wrap)?;
    let score = necessity_score(&logprobs, opts.orientation, opts.length_norm).map_err(wrap)?;
    Ok(ScoredSample { id: sample.id.clone(), score, num_tokens: logprobs.len() as u64 })
}

/// Scores every sample, fanning out over `jobs` threads (0 = all cores).
/// Output order equals input order and does not depend on `jobs`.
pub fn score_pool(scorer: &dyn Scorer, pool: &[Sample], opts: ScoreOptions, jobs: usize) -> Result<Vec<ScoredSample>, ScoreError> {
    let results: Vec<Result<ScoredSample, ScoreError>> =
        with_jobs(jobs, || pool.par_iter().map(|s| score_sample(scorer, s, opts)).collect());
    results.into_iter().collect()
}
