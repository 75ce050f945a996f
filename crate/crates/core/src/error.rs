use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("singular boundary closure at the {side} boundary")]
    SingularClosure { side: &'static str },
    #[error("singular factorization for dt={dt} (pivot ratio {pivot_ratio:.3e})")]
    SingularFactorization { dt: f64, pivot_ratio: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("blow-up at t={t}: norm {norm:.3e} exceeds {threshold:.3e}")]
    BlowUp { t: f64, norm: f64, threshold: f64 },
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("observability failure: {0}")]
    Observability(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Validation-type errors map to exit status 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::Constraint(_) | Error::Format(_) | Error::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
