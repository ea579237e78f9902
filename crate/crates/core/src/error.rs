use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("point ({x}, {y}) outside {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("seed ({x}, {y}) outside {width}x{height} image")]
    SeedOutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("seed ({x}, {y}) too close to the image border (radial step {radial_step:.3} px)")]
    SeedTooCloseToBorder { x: f64, y: f64, radial_step: f64 },

    #[error("helper ({x}, {y}) is {distance:.2} px from the seed, template radius is {max_radius:.2} px")]
    HelperOutOfRange {
        x: f64,
        y: f64,
        distance: f64,
        max_radius: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unbounded flow: an infinite-capacity path joins source and sink")]
    UnboundedFlow,

    #[error("max-flow exceeded {0} augmentations")]
    IterationLimit(usize),

    #[error("undefined distance: {0}")]
    UndefinedDistance(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("protocol: {0}")]
    Protocol(String),
}

/// Coarse failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Computation,
    Protocol,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Stable kebab-case tag for machine consumers (CLI stderr, protocol replies).
    pub fn reason(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io-error",
            Error::Format { .. } => "format-error",
            Error::InvalidImage(_) => "invalid-image",
            Error::OutOfBounds { .. } => "out-of-bounds",
            Error::InvalidPolygon(_) => "invalid-polygon",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::SeedOutOfBounds { .. } => "seed-out-of-bounds",
            Error::SeedTooCloseToBorder { .. } => "seed-too-close-to-border",
            Error::HelperOutOfRange { .. } => "helper-out-of-range",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::UnboundedFlow => "unbounded-flow",
            Error::IterationLimit(_) => "iteration-limit",
            Error::UndefinedDistance(_) => "undefined-distance",
            Error::DegenerateSample(_) => "degenerate-sample",
            Error::EmptyInput(_) => "empty-input",
            Error::Manifest(_) => "manifest-error",
            Error::Protocol(_) => "protocol-error",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::UnboundedFlow
            | Error::IterationLimit(_)
            | Error::UndefinedDistance(_)
            | Error::DegenerateSample(_) => ErrorClass::Computation,
            Error::Protocol(_) => ErrorClass::Protocol,
            _ => ErrorClass::Input,
        }
    }
}
