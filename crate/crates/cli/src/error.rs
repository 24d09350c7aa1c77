use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("no trained weights for method {method:?} (looked for {path})")]
    Lookup { method: String, path: PathBuf },

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: d2gp::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Lookup { .. } => "lookup",
            CliError::UnknownMethod(_) => "method",
            CliError::Core { source, .. } => source.kind(),
            CliError::Io { .. } => "io",
        }
    }

    /// Single line, `kind=<kind> message=<json string>`.
    pub fn machine_line(&self) -> String {
        let msg = serde_json::to_string(&self.to_string()).unwrap_or_else(|_| "\"?\"".into());
        format!("error kind={} message={msg}", self.kind())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T>;
}

impl<T> Context<T> for d2gp::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
