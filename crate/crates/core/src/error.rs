use std::io;
use std::path::{Path, PathBuf};

use crate::dataset_hub::Denial;
use crate::evaluator::SanityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A line of an input file could not be parsed.
    #[error("{source_name}, line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Input parsed but violates a uniqueness or consistency rule.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A value handed to a serializer violates its type invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },

    #[error("{kind} `{id}` already exists")]
    AlreadyExists { kind: &'static str, id: String },

    #[error(transparent)]
    Denied(#[from] Denial),

    #[error("data withheld: {0}")]
    Withheld(String),

    #[error("invalid command template: {0}")]
    Template(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("`{node}` cannot be deleted, it is referenced by {}", referenced_by.join(", "))]
    Referenced {
        node: String,
        referenced_by: Vec<String>,
    },

    #[error("container image `{0}` is not available to the backend")]
    ImageUnavailable(String),

    #[error("execution of `{node}` failed: {reason}")]
    Execution { node: String, reason: String },

    #[error("run failed sanity checks ({} error finding(s))", .0.error_count())]
    Sanity(SanityReport),

    #[error("digest mismatch for `{path}`: expected {expected}, found {found}")]
    DigestMismatch {
        path: String,
        expected: String,
        found: String,
    },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    IoAt { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error object.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse_error",
            Error::Integrity(_) => "integrity_error",
            Error::Invariant(_) => "invariant_violation",
            Error::NotFound { .. } => "not_found",
            Error::AlreadyExists { .. } => "already_exists",
            Error::Denied(_) => "access_denied",
            Error::Withheld(_) => "data_withheld",
            Error::Template(_) => "template_error",
            Error::Pipeline(_) => "pipeline_error",
            Error::Referenced { .. } => "referenced",
            Error::ImageUnavailable(_) => "image_unavailable",
            Error::Execution { .. } => "execution_failed",
            Error::Sanity(_) => "sanity_check_failed",
            Error::DigestMismatch { .. } => "digest_mismatch",
            Error::Analysis(_) => "analysis_error",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::IoAt { .. } | Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }
}

/// Attaches the offending path to I/O errors.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|source| Error::IoAt {
            path: path.as_ref().to_path_buf(),
            source,
        })
    }
}
