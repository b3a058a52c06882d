use thiserror::Error;

/// Errors raised across the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite coefficient output: {0}")]
    NonFinite(String),

    #[error("state blow-up on path {path} at step {step}")]
    BlowUp { path: usize, step: usize },

    #[error("singular regression design at step {step}: {detail}")]
    SingularDesign { step: usize, detail: String },

    #[error("fixed-point iteration did not converge at step {step} (path {path})")]
    FixedPoint { step: usize, path: usize },

    #[error("CFL condition violated: {value:.4} > {limit}")]
    Cfl { value: f64, limit: f64 },

    #[error("unsupported dimension: {0}")]
    Dimension(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidProblem(_) => "invalid_problem",
            Self::NonFinite(_) => "non_finite",
            Self::BlowUp { .. } => "blow_up",
            Self::SingularDesign { .. } => "singular_design",
            Self::FixedPoint { .. } => "fixed_point",
            Self::Cfl { .. } => "cfl",
            Self::Dimension(_) => "dimension",
            Self::Precondition(_) => "precondition",
            Self::GridMismatch(_) => "grid_mismatch",
            Self::Config(_) => "config",
            Self::Io(_) => "io",
            Self::Json(_) => "json",
        }
    }

    /// Process exit status: 2 for rejected inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidProblem(_) | Self::Cfl { .. } | Self::Dimension(_) | Self::GridMismatch(_) | Self::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_errors_exit_with_two() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Cfl { value: 1.2, limit: 0.95 }.exit_code(), 2);
        assert_eq!(Error::FixedPoint { step: 0, path: 0 }.exit_code(), 1);
        assert_eq!(Error::GridMismatch("x".into()).kind(), "grid_mismatch");
    }
}
