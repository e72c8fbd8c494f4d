use thiserror::Error;

/// Errors surfaced by the control-design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An input violates a documented precondition (non-finite entries,
    /// asymmetric weight matrix, invalid grid, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Controller design failed, e.g. the pair (A, B) could not be
    /// stabilized or the Riccati iteration diverged.
    #[error("design error: {0}")]
    Design(String),

    /// The Lyapunov equation has no unique solution (closed loop not
    /// Hurwitz).
    #[error("no unique solution: {0}")]
    NoUniqueSolution(String),

    /// Grid index outside the precomputed table.
    #[error("index out of range: index {index}, table has {count} points")]
    Range { index: usize, count: usize },

    /// The triggering grid cannot certify a positive dwell time even for
    /// the benchmark gain.
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    /// The gain program has no strictly feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A certified invariant failed at runtime (indicates a numerical
    /// breakdown, not a user error).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Malformed or mismatched table cache file.
    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
