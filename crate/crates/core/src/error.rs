//! Error types.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackgroundError {
    #[error("invalid background parameters: {0}")]
    InvalidParameters(String),
    #[error("radius {r} is not outside the horizon r+ = {r_plus}")]
    InsideHorizon { r: f64, r_plus: f64 },
    #[error("invalid sample region: {0}")]
    InvalidRegion(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("at position {pos}: unexpected character '{ch}'")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("at position {pos}: expected {expected}, found {found}")]
    UnexpectedToken { pos: usize, expected: String, found: String },
    #[error("at position {pos}: unknown variable '{name}' (allowed: u, v, r, t)")]
    UnknownVariable { pos: usize, name: String },
    #[error("at position {pos}: unknown function '{name}'")]
    UnknownFunction { pos: usize, name: String },
    #[error("at position {pos}: malformed number '{text}'")]
    BadNumber { pos: usize, text: String },
    #[error("empty expression")]
    Empty,
}

impl ParseError {
    /// Byte offset (0-based) of the offending token; end of input reports the input length.
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::UnexpectedChar { pos, .. }
            | ParseError::UnexpectedToken { pos, .. }
            | ParseError::UnknownVariable { pos, .. }
            | ParseError::UnknownFunction { pos, .. }
            | ParseError::BadNumber { pos, .. } => Some(*pos),
            ParseError::Empty => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("coefficient {name}: {source}")]
    Parse { name: String, source: ParseError },
    #[error("unknown built-in coefficient '{0}'")]
    UnknownBuiltin(String),
    #[error("invalid sample region: {0}")]
    InvalidRegion(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid initial data: {0}")]
    InvalidData(String),
    #[error("non-finite value at u = {u}, v = {v} (mode l = {l})")]
    NonFinite { u: f64, v: f64, l: u32 },
    #[error("convergence study needs at least three resolutions, got {0}")]
    TooFewLevels(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("value of u = {0} outside the evolved range")]
    OutOfRange(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("only {got} usable points in the fit window, need {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("invalid fit window [{0}, {1}]")]
    InvalidWindow(f64, f64),
    #[error("non-positive value {y} at u = {u} inside the fit window")]
    NonPositive { u: f64, y: f64 },
    #[error("unknown claim '{0}' (expected energy, radiation, pointwise_r, pointwise_bulk, T_energy, higher_modes, sharp or sharp_radiation)")]
    UnknownClaim(String),
    #[error("quantity not recorded in the series: {0}")]
    MissingQuantity(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Background(#[from] BackgroundError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

impl From<EvolveError> for CliError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::InvalidGrid(_) | EvolveError::InvalidData(_) | EvolveError::TooFewLevels(_) => {
                CliError::Config(e.to_string())
            }
            EvolveError::NonFinite { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 3,
            CliError::Diagnostics(DiagnosticsError::Evolve(EvolveError::NonFinite { .. })) => 3,
            _ => 2,
        }
    }
}
