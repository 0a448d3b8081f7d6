use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("request is empty")]
    EmptyRequest,
    #[error("sample has no candidates")]
    NoCandidates,
    #[error("ordinal {ordinal} out of range for {len} candidates")]
    OutOfRange { ordinal: usize, len: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("layout too small: {needed} cells needed, {available} available")]
    LayoutOverflow { needed: usize, available: usize },
    #[error("templates exhausted: reached {reached} of {wanted} unique requests")]
    ExhaustedTemplates { reached: usize, wanted: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("bad model magic")]
    BadMagic,
    #[error("model format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed inputs rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
