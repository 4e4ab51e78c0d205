use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value encountered: {0}")]
    Diverged(String),
    #[error("backward called without a matching forward cache")]
    MissingForwardCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid frequency {0} (must lie in (0, 0.5])")]
    InvalidFrequency(f64),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("scope error: {0}")]
    Scope(String),
    #[error("degenerate architecture: {0}")]
    Degenerate(String),
    #[error("sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("missing groundtruth for architecture {0}")]
    MissingGroundtruth(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than internal failures.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidFrequency(_)
                | Error::InvalidSpec(_)
                | Error::Scope(_)
                | Error::Degenerate(_)
                | Error::LengthMismatch(..)
                | Error::MissingGroundtruth(_)
                | Error::Parse(_)
                | Error::DuplicateId(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
