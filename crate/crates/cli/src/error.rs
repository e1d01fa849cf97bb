use std::fmt;

use serde_json::json;

/// Failure of a run, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration.
    Config(String),
    /// Invalid inputs detected by the library.
    Input(bench_hedge::error::Error),
    /// Breakdown during the computation.
    Numerical(bench_hedge::error::Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() } })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
            CliError::Input(e) | CliError::Numerical(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bench_hedge::error::Error> for CliError {
    fn from(e: bench_hedge::error::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e)
        } else {
            CliError::Numerical(e)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bench_hedge::error::Error;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::from(Error::InvalidParameter("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(Error::StructureCondition("x".into())).exit_code(), 2);
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Config("bad".into()).to_json()["error"]["kind"], "config");
    }
}
