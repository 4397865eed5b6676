use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Invariant,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel ({x}, {y}) outside frame [0, {width}) x [0, {height})")]
    PixelOutOfFrame {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("invalid {field}: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{context}: parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        context: String,
        line: Option<usize>,
        message: String,
    },

    #[error("duplicate {kind} id '{id}'")]
    DuplicateId { kind: &'static str, id: String },

    #[error("{owner} references unknown {kind} '{id}'")]
    DanglingReference {
        owner: String,
        kind: &'static str,
        id: String,
    },

    #[error("signal group '{0}' has no members")]
    EmptyGroup(String),

    #[error("light '{light}' is assigned to group '{group}' but that group does not list it")]
    MembershipMismatch { light: String, group: String },

    #[error("unknown light '{0}'")]
    UnknownLight(String),

    #[error("unknown camera '{id}' (valid: {valid})")]
    UnknownCamera { id: String, valid: String },

    #[error("phase schedule for group '{group}' has no state at t={at} ns")]
    ScheduleGap { group: String, at: i64 },

    #[error("{what}: timestamps not monotone at {at}")]
    NonMonotone { what: String, at: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Invariant,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
