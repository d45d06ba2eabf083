use thiserror::Error;

/// Errors produced by the fitting, bootstrap and calibration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluxcalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("under-determined problem: {observations} observations for {parameters} free parameters")]
    UnderDetermined {
        observations: usize,
        parameters: usize,
    },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("singular least-squares fit: {0}")]
    SingularFit(String),

    #[error("bootstrap ensemble quality: {failures} of {total} replicates failed (limit {limit:.3})")]
    EnsembleQuality {
        failures: usize,
        total: usize,
        limit: f64,
    },

    #[error("calibration domain: {0}")]
    CalibrationDomain(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, FluxcalError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FluxcalError::InvalidArgument(msg.into()))
}
