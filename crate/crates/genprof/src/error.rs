use thiserror::Error;

/// Errors produced by dataset ingestion, solving, generation, and evaluation.
#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("vectors must have equal length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown context id '{0}'")]
    UnknownContext(String),

    #[error("duplicate context (id '{0}') in catalog")]
    DuplicateContext(String),

    #[error("marginal weights sum to {sum}, which is not 1 within 1e-9")]
    WeightSum { sum: f64 },

    #[error("hilbert metric requires strictly positive entries")]
    NonPositiveEntry,

    #[error("snapshot index {sigma} out of range for {n_snapshots} snapshots")]
    SigmaOutOfRange { sigma: usize, n_snapshots: usize },

    #[error("dense tensor would hold {entries} entries, above the cap of {cap}")]
    TensorTooLarge { entries: u128, cap: usize },

    #[error(
        "projection for snapshot {sigma} underflowed to zero; \
         the kernel is too peaked — retry with a larger epsilon"
    )]
    ProjectionUnderflow { sigma: usize },

    #[error("plan puts mass where the reference kernel is zero; KL divergence is undefined")]
    SupportMismatch,

    #[error(
        "solver stopped after {iterations} sweeps with residual {final_error:.3e}; \
         pass an override to generate from the best iterate"
    )]
    NotConverged { iterations: usize, final_error: f64 },

    #[error(
        "conditioning kernel vanished for the requested context \
         (nearest support point at distance {nearest:.6e}); widen the bandwidth"
    )]
    KernelVanished { nearest: f64 },

    #[error("no bracketing contexts in the catalog for the requested context")]
    NoBracket,

    #[error("reference profile has zero maximum state norm; normalized distance is undefined")]
    ZeroReference,

    #[error("snapshot grid reaches {grid_end} s but the longest profile ends at {data_end} s")]
    GridBeyondData { grid_end: f64, data_end: f64 },

    #[error("dataset content hash mismatch: solution was fit on {expected}, files hash to {actual}")]
    HashMismatch { expected: String, actual: String },
}

pub type Result<T> = std::result::Result<T, Error>;
