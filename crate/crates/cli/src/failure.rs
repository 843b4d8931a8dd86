use thiserror::Error;

/// Command failure, carrying the process exit code it maps to.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] acton::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(acton::Error::InvalidConfig(_)) => 1,
            Failure::Core(_) => 2,
        }
    }

    pub fn data(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Failure::Data(format!("{}: {e}", path.display()))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
