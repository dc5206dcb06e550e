use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument outside the domain of the model (non-positive frequency,
    /// point inside a sphere, evanescent drive, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Coincident points or an exactly singular linear system.
    #[error("singularity: {0}")]
    Singular(String),

    /// A lattice sum whose truncation tail exceeds the requested tolerance.
    #[error("lattice sum not converged: estimated tail {tail:.3e} exceeds tolerance {tolerance:.3e}")]
    Convergence { tail: f64, tolerance: f64 },

    /// The Liouvillian has a non-unique steady state.
    #[error("degenerate steady state: {0}")]
    Degenerate(String),

    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    /// Stable numeric code used in poisoned CSV cells.
    pub fn code(&self) -> u32 {
        match self {
            Error::Domain(_) => 1,
            Error::Geometry(_) => 2,
            Error::Config(_) => 3,
            Error::Singular(_) => 4,
            Error::Convergence { .. } => 5,
            Error::Degenerate(_) => 6,
            Error::Fit(_) => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
