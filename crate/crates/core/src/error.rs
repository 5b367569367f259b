use thiserror::Error;

pub type Result<T> = std::result::Result<T, KphError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KphError {
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("structure violation: {0}")]
    Structure(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("Gram matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularGram { condition: f64 },
    #[error("matrix is not skew minus PSD: symmetric part has eigenvalue {max_eigenvalue:e}")]
    NotDissipative { max_eigenvalue: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigenvalueFailure,
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },
    #[error("matrix is not Schur stable (spectral radius {radius:e})")]
    NotSchur { radius: f64 },
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("certificate failed: {0}")]
    Certificate(String),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(KphError::Dimension {
            context,
            expected,
            got,
        })
    }
}
