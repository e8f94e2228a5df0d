use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("archive is empty")]
    EmptyArchive,

    #[error("invalid outcome cannot be archived")]
    InvalidOutcome,

    #[error("degenerate neighborhood: {0}")]
    Degenerate(String),

    #[error("all initial candidates produced invalid outcomes ({0} evaluated)")]
    NoValidCandidates(usize),

    #[error("mode collapse: {0}")]
    ModeCollapse(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
