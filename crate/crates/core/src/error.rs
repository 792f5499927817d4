use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-positive depth {depth} at joint {joint}")]
    NonPositiveDepth { joint: usize, depth: f64 },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("sequence too short: need at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("row {row} is not unit-normalized (norm {norm})")]
    NonNormalizedInput { row: usize, norm: f64 },
    #[error("refinement policy has no prototypes")]
    EmptyPrototypes,
    #[error("need {need} distinct views, found {found}")]
    InsufficientViews { need: usize, found: usize },
    #[error("non-finite loss at step {step}: {detail}")]
    NaNLoss { step: usize, detail: String },
    #[error("checkpoint does not match configuration: {0}")]
    CheckpointShapeMismatch(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
