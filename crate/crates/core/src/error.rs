use thiserror::Error;

/// Errors raised anywhere in the tracking and analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("patch {height}x{width} is not divisible by stage {stage} stride {stride}")]
    StrideMismatch {
        stage: u8,
        stride: usize,
        height: usize,
        width: usize,
    },

    #[error("unknown backbone stage {0}; expected 3, 4 or 5")]
    UnknownStage(u8),

    #[error("stage mismatch: template from stage {template}, search from stage {search}")]
    StageMismatch { template: u8, search: u8 },

    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("motion token has {got} rows, expected {expected} (2L)")]
    TokenLength { expected: usize, got: usize },

    #[error("{0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("frame indices must be strictly increasing (frame {previous} followed by {next})")]
    NonMonotonicFrames { previous: u64, next: u64 },

    #[error("timestamps must be strictly increasing (sample {index})")]
    NonMonotonicTime { index: usize },

    #[error("disparity {0} px is not positive: target behind camera or unmatched")]
    NonPositiveDisparity(f64),

    #[error("point depth {0} mm is not in front of the camera")]
    BehindCamera(f64),

    #[error("{metric} needs at least {required} samples, got {got}")]
    TooFewSamples {
        metric: &'static str,
        required: usize,
        got: usize,
    },

    #[error("score map contains no finite values")]
    NoFiniteScore,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("trajectory left the camera frusta after {attempts} attempts")]
    FrustumExit { attempts: usize },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
