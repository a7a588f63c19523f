use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] binorm::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// 1 for usage mistakes, 2 for bad data or files, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        use binorm::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::Numerical(_)) => 3,
            CliError::Core(_) | CliError::Io { .. } => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
