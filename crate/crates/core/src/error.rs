use thiserror::Error;

/// Errors raised anywhere in the fitting and screening pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum MscsError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} observations to fit {k} components, got {n}")]
    InsufficientData { n: usize, k: usize, needed: usize },

    #[error("information matrix for order {order} is numerically singular (condition number {condition:.3e})")]
    SingularMatrix { order: usize, condition: f64 },

    #[error("W matrix for orders ({k_small}, {k_large}) has a non-real spectrum (max |Im|/(1+|Re|) = {max_imag_ratio:.3e})")]
    NonRealSpectrum {
        k_small: usize,
        k_large: usize,
        max_imag_ratio: f64,
    },

    #[error("eigenvalue iteration did not converge for a {dim}x{dim} matrix")]
    EigenFailure { dim: usize },

    #[error("unknown scenario id {0} (expected 1..=4)")]
    UnknownScenario(u32),

    #[error("no mixture order could be fitted: {0}")]
    NoFit(String),

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl MscsError {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MscsError::SingularMatrix { .. }
                | MscsError::NonRealSpectrum { .. }
                | MscsError::EigenFailure { .. }
                | MscsError::NoFit(_)
                | MscsError::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, MscsError>;
