use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid scale {0}: must be positive and finite")]
    InvalidScale(f64),

    #[error("invalid axis: {0}")]
    InvalidAxis(String),

    #[error("quaternion norm {0} is not within tolerance of 1")]
    NonUnitQuaternion(f64),

    #[error("invalid truncation: n_max={n_max}, l_max={l_max}")]
    InvalidTruncation { n_max: usize, l_max: usize },

    #[error("inadmissible Zernike index (n={n}, l={l}, m={m})")]
    InadmissibleIndex { n: usize, l: usize, m: i64 },

    #[error("truncation mismatch: {0}")]
    TruncationMismatch(String),

    #[error("vector is not tangent at q (|<q,v>| = {0})")]
    NotTangent(f64),

    #[error("alignment diverged after {iterations} iterations (overlap trace attached)")]
    AlignmentDiverged { iterations: usize, trace: Vec<f64> },

    #[error(
        "degenerate rotational Hessian: no singular value above the pseudoinverse cutoff; \
         the shape likely has a continuous rotational symmetry"
    )]
    DegenerateHessian,

    #[error("shape optimization diverged at step {step}")]
    OptimizationDiverged { step: usize, losses: Vec<f64> },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
