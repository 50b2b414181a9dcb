use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which container invariant a [`ValidationError`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationKind {
    Dimension,
    NonFinite,
    SkinningRowSum,
    SkinningNegative,
    SkinningSparsity,
    RegressorRow,
    Tree,
    NeighborSet,
    PoseBlock,
    Face,
    Part,
    FootWidth,
    FootNetwork,
    Lineage,
}

impl ValidationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidationKind::Dimension => "dimension",
            ValidationKind::NonFinite => "non-finite",
            ValidationKind::SkinningRowSum => "skinning-row-sum",
            ValidationKind::SkinningNegative => "skinning-negative",
            ValidationKind::SkinningSparsity => "skinning-sparsity",
            ValidationKind::RegressorRow => "regressor-row",
            ValidationKind::Tree => "tree",
            ValidationKind::NeighborSet => "neighbor-set",
            ValidationKind::PoseBlock => "pose-block",
            ValidationKind::Face => "face",
            ValidationKind::Part => "part",
            ValidationKind::FootWidth => "foot-width",
            ValidationKind::FootNetwork => "foot-network",
            ValidationKind::Lineage => "lineage",
        }
    }
}

impl fmt::Display for ValidationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid model ({kind}): {detail}")]
pub struct ValidationError {
    pub kind: ValidationKind,
    pub detail: String,
}

impl ValidationError {
    pub fn new(kind: ValidationKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

/// Failures while decoding a container file.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("not a model container (bad magic)")]
    Magic,
    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("container truncated: {0}")]
    Truncated(String),
    #[error("tensor data checksum mismatch")]
    Checksum,
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

impl LoadError {
    pub fn category(&self) -> &'static str {
        match self {
            LoadError::Magic => "magic",
            LoadError::Version { .. } => "version",
            LoadError::Truncated(_) => "truncated",
            LoadError::Checksum => "checksum",
            LoadError::Manifest(_) => "manifest",
            LoadError::Invalid(_) => "invalid-model",
        }
    }
}

#[derive(Debug, Error)]
#[error("{path}:{line}: {message}")]
pub struct MeshError {
    pub path: String,
    /// 1-based line for text formats, byte offset for binary PLY.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("invalid part: {0}")]
    InvalidPart(String),
    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),
    #[error("numerical failure: {message}")]
    NumericalFailure { message: String, trace: Vec<f64> },
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("parameter file: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable, machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Validation(_) => "invalid-model",
            Error::Unsupported(_) => "unsupported",
            Error::InvalidPart(_) => "invalid-part",
            Error::ModelInconsistency(_) => "model-inconsistency",
            Error::NumericalFailure { .. } => "numerical-failure",
            Error::Refused(_) => "refused",
            Error::Load(e) => match e {
                LoadError::Invalid(_) => "invalid-model",
                _ => "load",
            },
            Error::Mesh(_) => "mesh-syntax",
            Error::Params(_) => "params",
            Error::Io(_) => "io",
        }
    }
}
