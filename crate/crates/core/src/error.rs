use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {0} is out of range (expected 1, 2 or 3)")]
    InvalidQubit(usize),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("trace {0} is not 1")]
    BadTrace(f64),

    #[error("concurrence edges violate the triangle inequality (radicand {0:.3e})")]
    TriangleInequality(f64),

    #[error("state vector cannot be normalized (norm {0:.3e})")]
    NotNormalizable(f64),

    #[error("expected {expected} values, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("parameter {name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("columns of the isometry are not orthonormal (deviation {0:.3e})")]
    NotIsometry(f64),

    #[error("isometry has {found} columns but the state has rank {rank}")]
    RankMismatch { rank: usize, found: usize },

    #[error("outcome probabilities sum to {0}, not 1")]
    BadProbabilities(f64),

    #[error("no counts record covers Pauli string {0}")]
    MissingSetting(String),

    #[error("tomography needs all 27 settings, {0} missing")]
    IncompleteTomography(usize),

    #[error("counts sum to {sum} but shots = {shots}")]
    CountsMismatch { sum: u64, shots: u64 },

    #[error("calibration is corrupted: lower bound exceeds upper bound by {0:.3e}")]
    CorruptCalibration(f64),

    #[error("parameter search range is empty")]
    EmptySearchRange,

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("decomposition does not reproduce the state (Frobenius error {0:.3e})")]
    Reconstruction(f64),

    #[error("invalid optimizer configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
