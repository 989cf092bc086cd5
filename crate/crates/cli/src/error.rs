use thiserror::Error;

/// Failure classes of a run, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::ConfigInvalid(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::NumericalFailure(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<flowreg::Error> for CliError {
    fn from(e: flowreg::Error) -> Self {
        use flowreg::Error as E;
        match e {
            E::InvalidParameters(_) | E::InvalidDimension(_) | E::NTooSmall(_) | E::LengthMismatch { .. } | E::TooLarge { .. } => {
                CliError::ConfigInvalid(e.to_string())
            }
            _ => CliError::NumericalFailure(e.to_string()),
        }
    }
}
