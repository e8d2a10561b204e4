//! Crate-wide error type. Exit-code mapping for the CLI lives in `cli`.

use thiserror::Error;

/// One problem found while validating a configuration file.
///
/// `path` is the dotted key path (`run.dt`), or a pseudo-path like
/// `<syntax>` for parse failures.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{} (line {l}, column {c}): {}", self.path, self.message),
            (Some(l), None) => write!(f, "{} (line {l}): {}", self.path, self.message),
            _ => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Mathematical-domain violation in an input (negative density, zero mass, ...).
    #[error("domain: {0}")]
    Domain(String),

    /// Structurally malformed call: mismatched lengths, empty reaction list, ...
    #[error("argument: {0}")]
    Argument(String),

    /// Aggregated configuration problems; every issue found, not just the first.
    #[error("configuration invalid:\n{}", .0.iter().map(|i| format!("  - {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),

    /// A solver or time stepper failed. `t` is the simulation time when known.
    #[error("numerical failure{}: {what}", .t.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    Numerical { what: String, t: Option<f64> },

    /// Time step rejected (positivity loss); the run loop halves dt and retries.
    #[error("step rejected at t = {t}: {what}")]
    StepRejected { what: String, t: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn numerical(what: impl Into<String>, t: Option<f64>) -> Self {
        Error::Numerical { what: what.into(), t }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
