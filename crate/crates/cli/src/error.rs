use fluxcal::FluxcalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or data.
    #[error("{0}")]
    Input(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] FluxcalError),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 2 input or validation error, 3 numerical failure,
    /// 4 ensemble-quality failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::MissingColumn(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                FluxcalError::InvalidArgument(_) | FluxcalError::UnderDetermined { .. } => 2,
                FluxcalError::EnsembleQuality { .. } => 4,
                FluxcalError::OptimizationFailed(_)
                | FluxcalError::SingularFit(_)
                | FluxcalError::CalibrationDomain(_)
                | FluxcalError::Internal(_) => 3,
            },
            CliError::Internal(_) => 3,
        }
    }
}

pub fn input<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Input(msg.into()))
}
