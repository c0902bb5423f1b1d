use std::fmt::Display;

/// Failure classes, each with its own process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, flags, manifest contents or incompatible checkpoint.
    #[error("configuration error: {0}")]
    Config(String),
    /// An input file is missing, unreadable or malformed, or a case is unpaired.
    #[error("ingestion error: {0}")]
    Ingestion(String),
    /// Failure while computing or writing outputs.
    #[error("processing error: {0}")]
    Processing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ingestion(_) => 3,
            CliError::Processing(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach context to a core error and classify it.
pub trait Context<T> {
    fn config(self, what: impl Display) -> CliResult<T>;
    fn ingest(self, what: impl Display) -> CliResult<T>;
    fn process(self, what: impl Display) -> CliResult<T>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn config(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| CliError::Config(format!("{what}: {e}")))
    }

    fn ingest(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| CliError::Ingestion(format!("{what}: {e}")))
    }

    fn process(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| CliError::Processing(format!("{what}: {e}")))
    }
}
