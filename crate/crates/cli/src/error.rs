use std::fmt;

/// Exit status 1 for anything the operator can fix, 2 for defects.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl fmt::Display) -> Self {
        CliError::User(msg.to_string())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => f.write_str(m),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

/// Core errors all stem from inputs, configuration or the filesystem.
macro_rules! user_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::User(e.to_string())
            }
        }
    )*};
}

user_error_from!(
    etcnas_core::ingest::IngestError,
    etcnas_core::orchestrator::OrchestratorError,
    etcnas_core::engine::EngineError,
    etcnas_core::space::SpaceError,
    etcnas_core::controllers::ReportError,
    etcnas_core::graph::SerialError
);

/// Wraps an I/O error with the path it concerns.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::User(format!("{}: {e}", path.display()))
}
