use std::fmt;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid model file, flags or input files; the message names the field.
    Schema(String),
    /// A functor or model could not be evaluated.
    Eval(String),
    /// The optimizer failed.
    Fit(String),
}

impl CliError {
    pub fn schema(field: impl fmt::Display, msg: impl fmt::Display) -> CliError {
        CliError::Schema(format!("{field}: {msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 1,
            CliError::Eval(_) => 2,
            CliError::Fit(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Eval(m) => write!(f, "evaluation error: {m}"),
            CliError::Fit(m) => write!(f, "fit error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
