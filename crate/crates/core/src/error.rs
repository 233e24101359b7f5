use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive camera depth {depth:.3e}{}", context_suffix(.context))]
    NonPositiveDepth { depth: f64, context: Option<String> },

    #[error("parse error in {}: line {line}: {reason}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("degenerate face {index} (area {area:.3e})")]
    DegenerateFace { index: usize, area: f64 },

    #[error("mesh has no vertices or faces")]
    EmptyMesh,

    #[error("mesh is not watertight: edge ({}, {}) is shared by {count} face(s)", .edge.0, .edge.1)]
    NotWatertight { edge: (usize, usize), count: usize },

    #[error("bad joint index {index} (skeleton has {count} joints)")]
    BadJointIndex { index: usize, count: usize },

    #[error("scene has no objects")]
    NoObjects,

    #[error("loss became non-finite at parameter {param} = {value}")]
    NonFiniteLoss { param: String, value: f64 },

    #[error("line search failed: {0}")]
    LineSearchFailed(String),

    #[error("empty matching")]
    EmptyMatching,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("placement failed after {attempts} attempts")]
    PlacementFailed { attempts: usize },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Attach a human-readable location (an object name, a joint) to a depth error.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::NonPositiveDepth { depth, .. } => Error::NonPositiveDepth {
                depth,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }

    /// Short stable identifier, used in JSON error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::Parse { .. } => "ParseError",
            Error::DegenerateFace { .. } => "DegenerateFace",
            Error::EmptyMesh => "EmptyMesh",
            Error::NotWatertight { .. } => "NotWatertight",
            Error::BadJointIndex { .. } => "BadJointIndex",
            Error::NoObjects => "NoObjects",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::LineSearchFailed(_) => "LineSearchFailed",
            Error::EmptyMatching => "EmptyMatching",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::Schema { .. } => "SchemaError",
            Error::InvalidInput(_) => "InvalidInput",
            Error::PlacementFailed { .. } => "PlacementFailed",
            Error::Io { .. } => "IoError",
        }
    }

    /// True for failures that come out of the optimizer rather than from bad input.
    pub fn is_optimization_failure(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::LineSearchFailed(_) | Error::NonPositiveDepth { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
