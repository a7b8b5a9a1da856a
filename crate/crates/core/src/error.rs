use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid place set: {0}")]
    InvalidPlaceSet(String),

    #[error("modulus {0} is not coprime to the finite places")]
    InvalidModulus(u64),

    #[error("{0} is not an S-integer")]
    NotSInteger(String),

    #[error("invalid norm profile: {0}")]
    InvalidProfile(String),

    #[error("invalid approximation function: {0}")]
    InvalidApprox(String),

    #[error("divergence cannot be decided: {0}")]
    Undecidable(String),

    #[error("comparison at the real place is too close to call: {0}")]
    Undecided(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient {prime}-adic precision: needed {needed} digits, have {available}")]
    InsufficientPrecision {
        prime: u64,
        needed: u32,
        available: u32,
    },

    #[error("enumeration budget of {limit} candidates exceeded")]
    BudgetExceeded { limit: u64 },

    #[error("no nontrivial solution found among {searched} candidates")]
    SearchExhausted { searched: u64 },

    #[error("invalid precision: {0}")]
    InvalidPrecision(String),

    #[error("bounding box has zero volume")]
    DegenerateBox,

    #[error("count does not fit in 64 bits")]
    CountOverflow,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no records to report")]
    EmptyRecords,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
