//! Two-stage data selection for instruction-tuning pools.
//!
//! Stage 1 draws a uniform seed subset and trains a scorer on it. Stage 2
//! scores the remaining candidates by response negative log-likelihood and
//! picks a necessity subset with grouped softmax sampling. The final dataset
//! is the union of the two, written together with a hash-verified manifest.

pub mod config;
pub mod digest;
pub mod ingest;
pub mod nbgs;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sample;
pub mod sampling;
pub mod scoring;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{validate_config, ConfigError, Orientation, SelectionConfig, Strategy};
pub use ingest::{make_fixture, read_pool, write_fixture, write_pool, IngestError, PoolReader, PoolStats};
pub use nbgs::{select, SelectionResult};
pub use rng::{derive_stream, RngStream};
pub use sample::{Role, Sample, ScoredSample, Turn};
pub use scoring::{NgramScorer, ScoreError, Scorer};

/// Broad failure classes; the CLI maps them to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or an operation requested out of order.
    Validation,
    /// Missing, unreadable, inconsistent, or tampered input data.
    Data,
    /// A broken internal invariant.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Nbgs(#[from] nbgs::NbgsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("stage {required} has not been completed in {}", dir.display())]
    StageMissing { required: pipeline::Stage, dir: PathBuf },
    #[error("{what} differs from the in-progress run in {}: {detail}", dir.display())]
    Mismatch { what: &'static str, dir: PathBuf, detail: String },
    #[error("artifact {name} does not match its recorded hash (expected {expected}, found {found})")]
    ArtifactHash { name: String, expected: String, found: String },
    #[error("run directory {} is locked by another run (remove {} if stale)", dir.display(), dir.join(pipeline::LOCK_FILE).display())]
    Locked { dir: PathBuf },
    #[error("no run state found in {}", dir.display())]
    NoState { dir: PathBuf },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        use nbgs::NbgsError;
        match self {
            Error::Config(_) | Error::StageMissing { .. } | Error::Mismatch { .. } | Error::NoState { .. } => {
                ErrorClass::Validation
            }
            Error::Sampling(_) => ErrorClass::Validation,
            Error::Score(ScoreError::EmptySeedSet | ScoreError::BadOrder { .. }) => ErrorClass::Validation,
            Error::Nbgs(NbgsError::Config(_) | NbgsError::NotEnoughCandidates { .. }) => ErrorClass::Validation,
            Error::Nbgs(NbgsError::Sampling(_)) => ErrorClass::Internal,
            Error::Invariant(_) => ErrorClass::Internal,
            Error::Ingest(_)
            | Error::Score(_)
            | Error::Nbgs(_)
            | Error::Io { .. }
            | Error::Corrupt { .. }
            | Error::ArtifactHash { .. }
            | Error::Locked { .. } => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
