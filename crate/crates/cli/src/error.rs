use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Malformed configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Filesystem failure.
pub const EXIT_IO: i32 = 3;
/// Anything else, including a failed gradient check.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}:{col}: {message}")]
    Config {
        path: String,
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Core(#[from] anchorlab_core::Error),
    #[error("{0}")]
    Failed(String),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    col: Option<usize>,
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// A configuration error located at byte `offset` of `text`.
    pub fn config_at(path: &str, text: &str, offset: usize, message: impl Into<String>) -> Self {
        let (line, col) = line_col(text, offset);
        CliError::Config {
            path: path.to_string(),
            line,
            col,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Core(anchorlab_core::Error::InvalidConfig(_)) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Core(anchorlab_core::Error::Io(_)) => EXIT_IO,
            _ => EXIT_FAILURE,
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        let mut out = ErrorLine {
            error: "failed",
            message: self.to_string(),
            path: None,
            line: None,
            col: None,
        };
        match self {
            CliError::Config {
                path,
                line,
                col,
                message,
            } => {
                out.error = "config";
                out.message = message.clone();
                out.path = Some(path.clone());
                out.line = Some(*line);
                out.col = Some(*col);
            }
            CliError::Io { path, source } => {
                out.error = "io";
                out.message = source.to_string();
                out.path = Some(path.display().to_string());
            }
            CliError::Core(e) => {
                out.error = match self.exit_code() {
                    EXIT_CONFIG => "config",
                    EXIT_IO => "io",
                    _ => "run",
                };
                out.message = e.to_string();
            }
            CliError::Failed(_) => {}
        }
        serde_json::to_string(&out).expect("error line serializes")
    }
}

/// 1-based line and column (in characters) of byte `offset`.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}
