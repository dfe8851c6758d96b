use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// TOML syntax or type error; the message carries line and column.
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {detail}")]
    Field { field: String, detail: String },
    #[error(transparent)]
    Solver(#[from] delaylqr::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn field(field: &str, detail: impl Into<String>) -> Self {
        CliError::Field {
            field: field.to_string(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Field { .. } => "config",
            CliError::Solver(e) => e.kind(),
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Field { .. } => 2,
            CliError::Solver(e) if e.is_input_error() => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    /// `error: kind=<kind> detail=<message>` on one line.
    pub fn line(&self) -> String {
        format!("error: kind={} detail={}", self.kind(), self.to_string().replace(['\n', '\r'], " "))
    }
}
