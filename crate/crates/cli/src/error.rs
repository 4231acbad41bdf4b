use std::fmt;
use std::path::Path;

use drma_core::DrmaError;

#[derive(Debug)]
pub enum CliError {
    Drma(DrmaError),
    Io(String),
    Json(serde_json::Error),
    /// Replayed outputs differ from the recorded digests.
    Mismatch(Vec<String>),
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// 2 for bad input or arguments, 3 for numerical failures, 1 for a
    /// failed replay check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Drma(e) if !e.is_data_error() => 3,
            CliError::Mismatch(_) => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Drma(e) if e.is_data_error() => write!(f, "data error: {e}"),
            CliError::Drma(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::Json(e) => write!(f, "json error: {e}"),
            CliError::Mismatch(files) => write!(f, "replay differs from the manifest: {}", files.join(", ")),
            CliError::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<DrmaError> for CliError {
    fn from(e: DrmaError) -> Self {
        CliError::Drma(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use drma_core::Stage;

    #[test]
    fn exit_code_taxonomy() {
        let data = CliError::from(DrmaError::MissingColumn("y".into()).at(Stage::NullFit));
        let numeric = CliError::from(DrmaError::RankDeficient { condition: 1e20 }.at(Stage::NullFit));
        assert_eq!(data.exit_code(), 2);
        assert_eq!(numeric.exit_code(), 3);
        assert!(numeric.to_string().contains("null-model fit"));
        assert_eq!(CliError::Mismatch(vec!["a.csv".into()]).exit_code(), 1);
        assert_eq!(CliError::Io("x".into()).exit_code(), 2);
    }
}
