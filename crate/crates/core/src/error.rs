use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate splitting: E_o - E_e = {gap:e} is below the floor {floor:e}; wells are effectively decoupled at this resolution")]
    Degenerate { gap: f64, floor: f64 },

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("calibration error: target period {target_ps} ps unreachable; achieved range [{min_ps}, {max_ps}] ps over the bracket")]
    Calibration {
        target_ps: f64,
        min_ps: f64,
        max_ps: f64,
    },

    #[error("precondition error: {0}")]
    Precondition(String),

    #[error("out of domain: y = {y} outside [{y_min}, {y_max}]")]
    OutOfDomain { y: f64, y_min: f64, y_max: f64 },

    #[error("empty phase: no grid point has density above the floor")]
    EmptyPhase,

    #[error("invariant failure: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Precondition(_) | Error::Io(_) => 2,
            Error::Numeric(_)
            | Error::Degenerate { .. }
            | Error::Calibration { .. }
            | Error::OutOfDomain { .. }
            | Error::EmptyPhase
            | Error::Csv(_) => 3,
            Error::ModelViolation(_) | Error::Invariant(_) => 4,
        }
    }
}
