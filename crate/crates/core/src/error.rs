use thiserror::Error;

#[derive(Debug, Error)]
pub enum FnseError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    /// The deterministic Picard map on the mild form stopped contracting.
    #[error("horizon too long: Picard iteration not contracting (growth factor {growth:.4})")]
    HorizonTooLong { growth: f64 },

    #[error("no local solution at this resolution: {0}")]
    NoLocalSolution(String),

    #[error("viscosity too small: {0}")]
    ViscosityTooSmall(String),

    #[error("time step violates the advective CFL limit (courant number {courant:.3})")]
    Cfl { courant: f64 },

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FnseError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(FnseError::InvalidInput(msg.into()))
}
