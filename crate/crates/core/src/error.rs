use std::path::PathBuf;

/// Unified error type for the whole crate.
///
/// Numeric routines refuse non-finite input up front instead of letting NaN
/// propagate silently; file-format loaders distinguish "not our format"
/// ([`Error::BadMagic`]) from "our format, damaged" ([`Error::Truncated`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("matrix dimension must be at least 1")]
    DimensionZero,

    #[error("matrix is not symmetric: max |m_ij - m_ji| = {max_abs_diff:e} exceeds tolerance")]
    Asymmetric { max_abs_diff: f64 },

    #[error("eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("sample matrix holds no columns")]
    EmptyMatrix,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("point dimension must be at least {needed}, got {got}")]
    DimensionTooSmall { needed: usize, got: usize },

    #[error("distance fractions must be non-negative and strictly ascending")]
    NonAscending,

    #[error("negative shift distance {0}")]
    NegativeDistance(f64),

    #[error("accumulator holds no samples; nothing to finalize")]
    EmptyAccumulator,

    #[error("per-class list is empty")]
    EmptyCounts,

    #[error("noise magnitude mu must be non-negative, got {0}")]
    NegativeMu(f64),

    #[error("tail threshold ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),

    #[error("perturbation start epoch must be at least 2, got {0}")]
    InvalidStartEpoch(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("loss became non-finite")]
    NonFiniteLoss,

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("gradient shape does not match parameters in {context}")]
    ShapeMismatch { context: &'static str },

    #[error("class {class_id} has no samples in the evaluation set")]
    MissingClass { class_id: usize },

    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample matrix carries no labels but the operation needs them")]
    MissingLabels,

    #[error("imbalance factor must be >= 1, got {0}")]
    InvalidImbalance(f64),

    #[error("class {class_id} would receive {got} samples; at least {needed} required")]
    ClassTooSmall {
        class_id: usize,
        needed: usize,
        got: usize,
    },

    #[error("bad magic number: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { expected: u32, got: u32 },

    #[error("unsupported {what} format version {got}")]
    UnsupportedVersion { what: &'static str, got: u8 },

    #[error("file truncated while reading {what}")]
    Truncated { what: &'static str },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("output path {0} already exists (pass --force to overwrite)")]
    OutputExists(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
