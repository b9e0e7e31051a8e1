use std::io;

use thiserror::Error;

use crate::taxonomy::RelationTier;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A structured input file had a bad line. Line numbers are 1-based.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no labels")]
    NoLabels,

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("no {tier} label available for anchor `{anchor}`")]
    TierExhausted { tier: RelationTier, anchor: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("node {0} was not recorded on this tape")]
    UnrecordedNode(usize),

    #[error("all positions are masked")]
    AllMasked,

    #[error("label `{0}` has a single class; ROC curve omitted")]
    DegenerateLabel(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
