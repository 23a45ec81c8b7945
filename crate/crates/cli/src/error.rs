use std::fmt;

/// A failure, tied to the offending config key when there is one.
#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            code,
            field: Some(field.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl From<sdelab::Error> for CliError {
    fn from(e: sdelab::Error) -> Self {
        let field = match &e {
            sdelab::Error::InvalidParameter { field, .. } => Some(field.clone()),
            _ => None,
        };
        CliError {
            code: "invalid_config",
            field,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            field: None,
            message: message.into(),
        }
    }

    /// Whether the failure comes from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self.code,
            "syntax" | "unknown_key" | "invalid_value" | "missing_key" | "invalid_config"
        )
    }

    /// One-line JSON suitable for machine parsing.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "error": self.code,
            "field": self.field,
            "message": self.message,
        })
        .to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime("io", e.to_string())
    }
}
