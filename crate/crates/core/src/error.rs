use thiserror::Error;

pub type Result<T, E = AttnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AttnError {
    #[error("decay rate {0} is outside (0, 1]")]
    DecayDomain(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fixture parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("precision mismatch: expected {expected}, found {found}")]
    Precision {
        expected: &'static str,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("head {head}: {source}")]
    Head {
        head: usize,
        #[source]
        source: Box<AttnError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AttnError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        AttnError::Shape(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        AttnError::Parse {
            line,
            message: msg.into(),
        }
    }
}
