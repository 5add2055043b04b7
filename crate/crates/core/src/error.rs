use std::path::PathBuf;

use crate::stage1::GlmFit;

pub type Result<T, E = HteError> = std::result::Result<T, E>;

/// Every failure the library can surface.
///
/// Variants are grouped by the exit-code class the command-line front end
/// maps them to (see [`HteError::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum HteError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("leakage: column `{0}` is measured after randomization and cannot be a covariate")]
    Leakage(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("alignment error: expected length {expected}, got {actual} ({what})")]
    Alignment {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate column `{0}`: no variation")]
    DegenerateColumn(String),

    #[error("no subject has a pseudo-outcome above the margin; benefit capture is undefined")]
    DegenerateBenefit,

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("complete separation detected on column `{column}`")]
    Separation { column: String, fit: Box<GlmFit> },

    #[error("IRLS did not converge in {} iterations", .fit.iterations)]
    NonConvergence { fit: Box<GlmFit> },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<HteError>,
    },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HteError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HteError::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        HteError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context layers.
    pub fn root(&self) -> &HteError {
        match self {
            HteError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 validation, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            HteError::Io { .. } => 4,
            HteError::SingularDesign(_)
            | HteError::Separation { .. }
            | HteError::NonConvergence { .. }
            | HteError::Infeasible(_)
            | HteError::Positivity(_)
            | HteError::DegenerateBenefit => 3,
            _ => 2,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}
