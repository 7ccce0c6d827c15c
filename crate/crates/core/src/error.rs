use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Each variant maps to one CLI exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unsupported dimension {dim} (maximum {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("tightening by {eps} empties the set (inradius {inradius})")]
    EmptyInterior { eps: f64, inradius: f64 },

    #[error("QP solver stopped after {iterations} iterations: {reason}")]
    Solver { iterations: usize, reason: String },

    #[error("Riccati iteration did not converge after {0} iterations; (A, B) may not be stabilizable")]
    Stabilizability(usize),

    #[error("terminal set iteration did not converge within {0} steps; supply Xf explicitly")]
    TerminalSet(usize),

    #[error("constant estimation failed: {0}")]
    Estimation(String),

    #[error("certification impossible: {0}")]
    Certification(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("numeric error in layer {layer}: non-finite value")]
    NonFinite { layer: usize },

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// CLI exit code: 3 validation, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Validation(_)
            | Error::Dimension { .. }
            | Error::UnsupportedDimension { .. }
            | Error::Precondition(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
            _ => 4,
        }
    }
}
