use std::fmt;

/// Errors raised across the pipeline.
///
/// Every variant maps to a short machine-parsable category via [`Error::category`],
/// which the CLI prints as the prefix of its single-line error message.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("goal '{goal}' reached only {found} of {quota} required detections")]
    DataScarcity {
        goal: String,
        found: usize,
        quota: usize,
    },
    #[error("{0}")]
    Format(String),
    #[error("missing artifact {path}: run {subcommand} first")]
    MissingArtifact { path: String, subcommand: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Dimension { .. } => "dimension",
            Error::DataScarcity { .. } => "data-scarcity",
            Error::Format(_) => "format",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub(crate) fn usage(msg: impl fmt::Display) -> Self {
        Error::Usage(msg.to_string())
    }

    pub(crate) fn format(msg: impl fmt::Display) -> Self {
        Error::Format(msg.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
