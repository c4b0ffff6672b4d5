use thiserror::Error;

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// Anything that is neither a configuration nor a numerical problem (I/O and the like).
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file or input files.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] avuc_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(avuc_core::Error::InvalidArgument(_) | avuc_core::Error::Format(_)) => EXIT_CONFIG,
            CliError::Core(avuc_core::Error::Json(_) | avuc_core::Error::Csv(_)) => EXIT_CONFIG,
            CliError::Core(_) | CliError::Io { .. } => EXIT_FAILURE,
        }
    }
}
