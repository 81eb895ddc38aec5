use thiserror::Error;

/// Errors produced by configuration handling, the feasibility checkers and
/// the beamformer construction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{field}: {detail}")]
    DimensionMismatch { field: String, detail: String },

    #[error("{stream} > {antennas} ({d} streams for {n} antennas)")]
    StreamOverflow {
        stream: String,
        antennas: String,
        d: usize,
        n: usize,
    },

    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(
        "subset enumeration over {users} users exceeds the limit of {limit} \
         (raise the limit or disable the guard)"
    )]
    SizeGuard { users: usize, limit: usize },

    #[error("allocation search space has {size} points, budget is {budget}")]
    BudgetExceeded { size: u128, budget: u128 },

    #[error("partition {d_row}x{d_col} does not fit a {rows}x{cols} matrix")]
    PartitionRange {
        rows: usize,
        cols: usize,
        d_row: usize,
        d_col: usize,
    },

    #[error("matrix is not Hermitian (relative symmetry residual {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("singular system in the {branch} branch (condition number {condition:e})")]
    SingularSystem {
        branch: &'static str,
        condition: f64,
    },

    #[error("column {column} of {matrix} has zero norm")]
    ZeroColumn { matrix: String, column: usize },

    #[error("divisibility violated: {0}")]
    Divisibility(String),

    #[error("no complete matching: matched {matched} of {required} equation blocks")]
    NoCompleteMatching { matched: usize, required: usize },

    #[error("non-finite rate for {user} (interference covariance condition number {condition:e})")]
    NumericalFailure { user: String, condition: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
