use serde_json::json;
use thiserror::Error;

/// Failures reported by the command-line front end.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Core(#[from] csrobust::Error),

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn output(path: &std::path::Path, message: impl ToString) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Config { field, .. } => Some(field),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Core(e) if e.is_data_error() => "data",
            CliError::Core(e) if e.is_numerical() => "divergence",
            CliError::Core(csrobust::Error::InvalidArgument(_) | csrobust::Error::Shape(_)) => "config",
            CliError::Core(_) | CliError::Output { .. } => "runtime",
        }
    }

    /// 2 for configuration problems, 3 for unreadable or malformed data,
    /// 4 for numerical divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "data" => 3,
            "divergence" => 4,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "error": self.kind(),
            "field": self.field(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}
