use alloc::string::String;

/// Errors raised by the surveillance algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty panel")]
    EmptyPanel,
    #[error("duplicate record for investor {investor}, stock {stock}, venue {venue}, day {day}")]
    DuplicateRecord {
        investor: String,
        stock: String,
        venue: String,
        day: String,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("investor {investor} registered with conflicting types")]
    ConflictingInvestorType { investor: String },
    #[error("unknown stock {0}")]
    UnknownStock(String),
    #[error("unknown investor {0}")]
    UnknownInvestor(String),
    #[error("invalid price sensitive event: {0}")]
    InvalidEvent(String),
    #[error("invalid window grid: {0}")]
    InvalidWindows(String),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("K = {k} exceeds the {points} available points")]
    TooFewPoints { k: usize, points: usize },
    #[error("label alignment supports K <= 10 (got {0}); lower K in the configuration")]
    AlignmentTooLarge(usize),
    #[error("reference period too short: no past window disjoint from the final window")]
    NoPastWindow,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("BiCM fit did not converge after {iterations} iterations (max degree residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
