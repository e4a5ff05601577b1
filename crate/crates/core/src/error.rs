use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trap configuration: {0}")]
    InvalidTrap(String),

    #[error("equilibration did not converge after {iterations} iterations (residual max-norm {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("unstable planar crystal: {unstable_modes} drumhead mode(s) with non-positive stiffness")]
    UnstableCrystal { unstable_modes: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ring basis too large: M = {rings} gives dimension {dim} (cap {cap})")]
    BasisTooLarge { rings: usize, dim: usize, cap: usize },

    #[error("norm drift {drift:.3e} exceeds tolerance during exact evolution at t = {time}")]
    NormDrift { drift: f64, time: f64 },

    #[error("infeasible beam geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("accidental resonance: {0}")]
    AccidentalResonance(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
