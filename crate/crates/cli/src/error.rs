use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, flag combinations or configuration values.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or mismatched inputs.
    #[error(transparent)]
    Data(#[from] anyhow::Error),
    /// A check ran to completion and failed.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl From<crispdec::Error> for CliError {
    fn from(e: crispdec::Error) -> Self {
        match e {
            crispdec::Error::Config(m) => CliError::Usage(m),
            other => CliError::Data(other.into()),
        }
    }
}
