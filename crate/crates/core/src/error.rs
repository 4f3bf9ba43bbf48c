use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("utterance too short: {frames} frames available, {needed} needed")]
    UtteranceTooShort { frames: usize, needed: usize },

    #[error("invalid frame configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid rate of speech value {0}")]
    InvalidRos(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("scatter matrix is singular: {0}")]
    SingularScatter(String),

    #[error("alignment contains no speech")]
    NoSpeech,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid duration {0}; durations start at one frame")]
    InvalidDuration(usize),

    #[error("self-transition probability {0} gives an unbounded expected duration")]
    Divergent(f64),

    #[error("invalid probability {0}")]
    InvalidProbability(f64),

    #[error("scaling factor must be positive and finite, got {0}")]
    InvalidAlpha(f64),

    #[error("word `{0}` is not in the lexicon")]
    OovWord(String),

    #[error("phone `{0}` has no HMM")]
    UnknownPhone(String),

    #[error("no path through the graph survives {frames} frames")]
    NoPath { frames: usize },

    #[error("reference transcript is empty")]
    EmptyReference,

    #[error("no hypothesis for utterance `{0}`")]
    MissingHypothesis(String),

    #[error("utterance `{0}` has no rate of speech value")]
    MissingRos(String),

    #[error("rate {rate} shrinks phone `{phone}` below one frame")]
    RateTooHigh { rate: f64, phone: String },

    #[error("no WAV files found in {0}")]
    EmptyCorpus(PathBuf),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
