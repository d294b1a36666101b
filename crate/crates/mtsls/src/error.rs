use thiserror::Error;

/// Errors raised by the library.
///
/// Numerical failures (`Rank`, `Collinear`, `DegenerateCells`) are kept
/// distinct from input validation so callers can map them to separate exit
/// statuses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid treatment coding: {0}")]
    InvalidCoding(String),

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("enumeration too large: {count} response types exceeds the cap of {cap}")]
    EnumerationTooLarge { count: f64, cap: usize },

    #[error("Assumption 2: rank condition fails ({0})")]
    Rank(String),

    #[error("collinearity: predicted treatment {index} has no variation after partialling out the others")]
    Collinear { index: usize },

    #[error("degenerate cells: {0:?}")]
    DegenerateCells(Vec<String>),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("no compliers: no response type has positive own weight in row {row}")]
    NoCompliers { row: usize },

    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),

    #[error("empty bin [{lo}, {hi}]: no observations fall in it")]
    EmptyBin { lo: f64, hi: f64 },

    #[error("subsample too small: {size} rows, need at least {min}")]
    SubsampleTooSmall { size: usize, min: usize },
}

impl Error {
    /// True for failures of the numerical kind (rank, collinearity,
    /// degenerate cells), as opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Rank(_)
                | Error::Collinear { .. }
                | Error::DegenerateCells(_)
                | Error::NoCompliers { .. }
                | Error::InsufficientVariation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
