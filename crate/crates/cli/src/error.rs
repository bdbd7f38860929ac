use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }
}

impl From<offload_core::Error> for CliError {
    fn from(e: offload_core::Error) -> Self {
        use offload_core::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Validation(e.to_string()),
            E::Infeasible(_) => CliError::Infeasible(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}
