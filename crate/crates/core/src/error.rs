use crate::expr::{EvalError, ParseError, SymbolError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("in {context}: {source}")]
    Parse { context: String, source: ParseError },
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter subset is empty")]
    EmptyTheta,
    #[error("model is already in implicit form")]
    AlreadyImplicit,
    #[error("operation requires a semi-explicit model")]
    NotSemiExplicit,
    #[error("operation requires a model without algebraic states")]
    NotOde,
    #[error("singular algebraic Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("point supplies derivatives up to order {have}, order {needed} is required")]
    MissingDerivatives { needed: usize, have: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular value decomposition failed: {0}")]
    Svd(String),
    #[error("E is singular")]
    SingularE,
    #[error("pencil (E, A) is singular; observability is indeterminate")]
    SingularPencil,
    #[error("inconsistent point: residual {residual:e} exceeds {tolerance:e}")]
    Inconsistent { residual: f64, tolerance: f64 },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Symbol(_) => "symbol",
            Error::InvalidModel(_) => "invalid-model",
            Error::UnknownParameter(_) => "unknown-parameter",
            Error::EmptyTheta => "empty-theta",
            Error::AlreadyImplicit => "already-implicit",
            Error::NotSemiExplicit => "not-semi-explicit",
            Error::NotOde => "not-ode",
            Error::SingularJacobian { .. } => "singular-jacobian",
            Error::NoConvergence { .. } => "no-convergence",
            Error::Eval(_) => "evaluation",
            Error::MissingDerivatives { .. } => "missing-derivatives",
            Error::Dimension(_) => "dimension",
            Error::Svd(_) => "svd",
            Error::SingularE => "singular-e",
            Error::SingularPencil => "singular-pencil",
            Error::Inconsistent { .. } => "inconsistent-point",
            Error::UnknownScenario(_) => "unknown-scenario",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
