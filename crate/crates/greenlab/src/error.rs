use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("metric is not positive definite: {0}")]
    NonPositiveDefinite(String),

    #[error("unsupported model for this operation: {0}")]
    UnsupportedModel(String),

    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("linear solver failed to converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("gradient degenerate at level t={0}")]
    DegenerateGradient(f64),

    #[error("level shell unresolved at t={t}: {reason}")]
    ShellUnresolved { t: f64, reason: String },

    #[error("rescale parameter R={0} leaves the grid")]
    OutOfRange(f64),

    #[error("expansion fit design matrix ill-conditioned (cond {0:.3e})")]
    IllConditionedFit(f64),

    #[error("volumetric and s-quadrature forms of D disagree: {volumetric} vs {quadrature}")]
    InconsistentForms { volumetric: f64, quadrature: f64 },

    #[error("linearization input exceeds configured norm caps: {0}")]
    UnboundedInput(String),

    #[error("configuration error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
