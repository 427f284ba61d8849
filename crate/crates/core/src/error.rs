use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("focal lengths must be finite and positive")]
    InvalidIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BodyError {
    #[error("{what}: expected {expected} values, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene mesh has no vertices")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("obj line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("temporal term needs at least 3 frames, got {frames}")]
    SequenceTooShort { frames: usize },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite energy in term `{term}`{}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    NonFiniteEnergy {
        term: &'static str,
        frame: Option<usize>,
    },
    #[error(transparent)]
    Body(#[from] BodyError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("parameter/gradient length mismatch: {params} params, {grads} grads, {moments} moments")]
    LengthMismatch {
        params: usize,
        grads: usize,
        moments: usize,
    },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no (frame, joint) pairs to evaluate")]
    EmptySubset,
    #[error("sequence needs at least 3 frames, got {frames}")]
    SequenceTooShort { frames: usize },
    #[error("frame count mismatch: bundle has {bundle}, estimate has {estimate}")]
    FrameCountMismatch { bundle: usize, estimate: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid override `{0}` (expected section.key=value)")]
    Override(String),
    #[error("unsupported schema_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Errors raised while reading or writing on-disk artifacts.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
}
