use std::io;

use crate::ClassId;

/// Errors raised anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("basis is not orthonormal (max |U^T U - I| = {deviation:e})")]
    NotOrthogonal { deviation: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("cannot expand classifier from {current} to {requested} classes")]
    InvalidExpansion { current: usize, requested: usize },

    #[error("class {0} has no samples")]
    EmptyClass(ClassId),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("unknown class index {index} (classifier has {num_classes})")]
    UnknownClass { index: usize, num_classes: usize },

    #[error("class {0} is already in the pool")]
    DuplicateClass(ClassId),

    #[error("class ids shared between tasks: {0:?}")]
    Overlap(Vec<ClassId>),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by bad inputs or configuration rather than by
    /// a failure during computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Config(_)
                | Error::Overlap(_)
                | Error::Format(_)
                | Error::InvalidExpansion { .. }
                | Error::DuplicateClass(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Tags an I/O error with the path it concerns.
pub(crate) fn at_path(path: &std::path::Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
