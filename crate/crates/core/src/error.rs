use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("history too short: need {needed} frames, have {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("history incomplete: {observed} of {needed} frames observed")]
    IncompleteHistory { observed: usize, needed: usize },

    #[error("trajectory database is empty")]
    EmptyDatabase,

    #[error("no agent segment long enough to form a database entry")]
    NoQualifyingSegments,

    #[error("trajectory length mismatch: predicted {pred}, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("not enough data: need {needed} qualifying ticks, have {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("need at least {needed} samples, have {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("sample lengths differ ({0} vs {1})")]
    SampleLengthMismatch(usize, usize),

    #[error("zero variance in {0}")]
    DegenerateVariance(&'static str),

    #[error("agent {source_agent} already overlaps the ego (distance {distance:.3} < {combined_radius:.3})")]
    Overlap {
        source_agent: u32,
        distance: f64,
        combined_radius: f64,
    },

    #[error("could not place agent {index} without collision after {attempts} attempts")]
    PlacementFailed { index: usize, attempts: usize },

    #[error("at tick {tick}: {source}")]
    AtTick {
        tick: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("replay diverged at tick {tick}, agent {agent_id}")]
    ReplayMismatch { tick: u32, agent_id: u32 },

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at_tick(self, tick: u32) -> Error {
        match self {
            e @ Error::AtTick { .. } => e,
            e => Error::AtTick {
                tick,
                source: Box::new(e),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
