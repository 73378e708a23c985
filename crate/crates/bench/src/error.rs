use lightning_core::AttnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Kernel(#[from] AttnError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{impl_id} does not implement the {direction} pass")]
    Unsupported {
        impl_id: &'static str,
        direction: &'static str,
    },

    #[error(
        "allocation accounting is not active; install CountingAllocator as the global allocator"
    )]
    AccountingInactive,

    #[error("block sizes disagree before timing: {0}")]
    BlockMismatch(String),

    #[error("nothing to emit")]
    NothingToEmit,

    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
