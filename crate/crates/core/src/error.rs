use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigen iteration did not converge after {iterations} iterations")]
    EigenNonConvergence { iterations: usize },

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("non-finite value at {context}")]
    NonFinite { context: String },

    #[error("iteration {iteration}: non-finite objective")]
    NonFiniteObjective { iteration: usize },

    #[error("bound violated at iteration {iteration}: objective fell from {before} to {after}")]
    BoundViolation { iteration: usize, before: f64, after: f64 },

    #[error("map `{0}` does not expose a bound function")]
    Unsupported(String),

    #[error("point is not a fixed point of the map (residual {residual:e})")]
    NotConverged { residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("component {component} has vanishing total responsibility")]
    DegenerateComponent { component: usize },

    #[error("state {state} has vanishing expected counts in `{table}`")]
    DegenerateState { state: usize, table: &'static str },

    #[error("label class {0} is absent from the data")]
    DegenerateLabel(i8),

    #[error("inner solve stagnated after {iterations} iterations (residual {residual:e})")]
    InnerSolve { iterations: usize, residual: f64 },

    #[error("boundary point: {0}")]
    Boundary(String),

    #[error("translation would make data negative (shift {shift} exceeds minimum {min})")]
    Negativity { shift: f64, min: f64 },

    #[error("invalid parameter vector: {0}")]
    Layout(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("runs are not comparable: {0}")]
    Incomparable(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error after stripping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the experiment description rather than the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config { .. } | Error::Parse { .. } | Error::Json(_) | Error::Incomparable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
