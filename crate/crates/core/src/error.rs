use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{kernel}: shape mismatch: {detail}")]
    Shape { kernel: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("pruning error: {0}")]
    Pruning(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(kernel: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            kernel,
            detail: detail.into(),
        }
    }

    /// Configuration problems are user errors; everything else is a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}
