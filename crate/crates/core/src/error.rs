use thiserror::Error;

/// Errors surfaced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum CertlocError {
    /// An input violated a structural precondition (empty list, bad dimension,
    /// non-orthonormal rotation, ...). The string names the offending field.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The distance block of the cost matrix is numerically singular, so the
    /// distance variables cannot be marginalized. Carries the `(sequence,
    /// timestamp)` slots whose columns are (near-)zero.
    #[error("degenerate geometry: distance block singular at slots {0:?}")]
    DegenerateGeometry(Vec<(usize, usize)>),

    /// A sampled bearing had (near-)zero length: the observer coincides with
    /// the observed feature.
    #[error("degenerate sample: observer coincides with feature of robot {robot} at timestamp {timestamp}")]
    DegenerateSample { robot: usize, timestamp: usize },

    /// The conic solver did not reach an acceptable solution.
    #[error("numerical failure in SDP solve: {0}")]
    NumericalFailure(String),

    /// Rank-one extraction could not resolve the homogenization sign.
    #[error("sign unresolvable: homogenization entry magnitude {0:.3e} below threshold")]
    SignUnresolvable(f64),

    /// The correspondence pattern extracted from the solution is not a
    /// permutation. Carries the raw block norms for diagnosis.
    #[error("uncertified output: correspondence pattern is not a permutation (block norms {norms:?})")]
    NotAPermutation { norms: Vec<Vec<f64>> },

    /// Recovered scale block has non-positive determinant, violating the
    /// positive-scale model constraint.
    #[error("sign-infeasible solution: det of scale-rotation block is {0:.3e} <= 0")]
    SignInfeasible(f64),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CertlocError>;
