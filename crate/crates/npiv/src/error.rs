use thiserror::Error;

/// Errors produced by the estimation and oracle routines.
///
/// `is_numerical` distinguishes failures of the numerical machinery
/// (factorization breakdowns, PSD violations) from invalid inputs; the CLI
/// maps the former to exit code 2 and everything else to exit code 1.
#[derive(Debug, Error)]
pub enum NpivError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("point index {index} out of range for precomputed kernel over {size} points")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("empty point list: {0}")]
    EmptyPoints(&'static str),

    #[error("matrix is not PSD within tolerance: min eigenvalue {min_eig:e} < -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("matrix is not symmetric: relative asymmetry {0:e} exceeds 1e-10")]
    NotSymmetric(f64),

    #[error("spectrum exceeds the kernel bound: eigenvalue {eig} > kappa_sq {kappa_sq}")]
    SpectrumExceedsBound { eig: f64, kappa_sq: f64 },

    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveRegularization(f64),

    #[error("Landweber iteration diverges: step_tau * x = {0} > 1")]
    LandweberDivergent(f64),

    #[error("SPD factorization failed{0}")]
    FactorizationFailed(&'static str),

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("integral-equation constraint infeasible: residual {residual:e} > 1e-8")]
    InfeasibleConstraint { residual: f64 },

    #[error("link diagnostic undefined: eigenvalue {0} >= 1 (rescale the instance)")]
    EigenvalueAtLeastOne(f64),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NpivError {
    /// True for failures of the numerical machinery rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NpivError::NotPsd { .. }
                | NpivError::SpectrumExceedsBound { .. }
                | NpivError::FactorizationFailed(_)
                | NpivError::InfeasibleConstraint { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, NpivError>;
