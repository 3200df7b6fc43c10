//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point violates the ball bound: sqrt(c)*|x| = {scaled_norm} exceeds {limit}")]
    BoundaryViolation { scaled_norm: f64, limit: f64 },

    #[error("Mobius denominator {value:e} below floor {floor:e}: near-antipodal boundary points")]
    DenominatorUnderflow { value: f64, floor: f64 },

    #[error("non-finite value at component {index}")]
    NonFiniteInput { index: usize },

    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("finite-difference step {0:e} below the 1e-10 floor")]
    StepTooSmall(f64),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("sample {index} (label {label}) has no same-class partner in the batch")]
    NoPositivePairs { index: usize, label: u32 },

    #[error("batch contains no valid (anchor, positive, negative) triple")]
    NoValidTriplets,

    #[error("need {needed} distinct classes, dataset has {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("class {label} has {available} samples, need {needed}")]
    InsufficientSamples {
        label: u32,
        needed: usize,
        available: usize,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },

    #[error("format version {found} not supported, this build reads version {current}")]
    VersionMismatch { found: u32, current: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("file shorter than its header implies: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("label {0} is not covered by any split range")]
    UnknownClass(u32),

    #[error("label lengths do not match the distance matrix: {0}")]
    LabelLengthMismatch(String),

    #[error("embeddings have dimension {0}; only 2-d embeddings can be plotted (retrain with --dim-out 2)")]
    DimensionNotPlottable(usize),

    #[error("non-finite loss at step {step}: {details}")]
    NonFiniteLoss { step: u64, details: String },

    #[error("split spec line {line}: {msg}")]
    SplitParse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
