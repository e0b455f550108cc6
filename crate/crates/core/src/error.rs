use thiserror::Error;

/// Every failure the solver can report. Numerical failures map to CLI exit
/// code 1 and configuration failures to exit code 2.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("DegenerateCurve: min |d eta/dy| = {min_speed:.3e}")]
    DegenerateCurve { min_speed: f64 },

    #[error("NodeCountMismatch: {0}")]
    NodeCountMismatch(String),

    #[error("InvertibilityLost: det grad eta = {det:.3e} at t = {time:.4}")]
    InvertibilityLost { det: f64, time: f64 },

    #[error("BasisDegenerate: Gram-Schmidt pivot {pivot:.3e} at mode {mode}")]
    BasisDegenerate { pivot: f64, mode: usize },

    #[error("SolverFailure: {0}")]
    SolverFailure(String),

    #[error("SingularStepMatrix: implicit step matrix is singular for dt = {dt:.3e}")]
    SingularStepMatrix { dt: f64 },

    #[error("CompatibilityViolation: tangential defect {defect:.3e} exceeds {tol:.1e}")]
    CompatibilityViolation { defect: f64, tol: f64 },

    #[error("NoContraction: difference ratio above 1 for {streak} consecutive iterates (last {ratio:.3})")]
    NoContraction { streak: usize, ratio: f64 },

    #[error("NotConverged: relative change {change:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, change: f64 },

    #[error("HorizonTooLarge: {0}")]
    HorizonTooLarge(String),

    #[error("OutsideTrustRegion: X-norm {norm:.4e} exceeds cap {cap:.4e}")]
    OutsideTrustRegion { norm: f64, cap: f64 },

    #[error("OffsetNotTangential: offset has normal component {0:.3e}")]
    OffsetNotTangential(f64),

    #[error("UnknownScenario: {0}")]
    UnknownScenario(String),

    #[error("ParseError at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("ValidationError in field `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("IoError: {0}")]
    Io(String),
}

impl Error {
    /// Diagnostic name printed by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DegenerateCurve { .. } => "DegenerateCurve",
            Error::NodeCountMismatch(_) => "NodeCountMismatch",
            Error::InvertibilityLost { .. } => "InvertibilityLost",
            Error::BasisDegenerate { .. } => "BasisDegenerate",
            Error::SolverFailure(_) => "SolverFailure",
            Error::SingularStepMatrix { .. } => "SingularStepMatrix",
            Error::CompatibilityViolation { .. } => "CompatibilityViolation",
            Error::NoContraction { .. } => "NoContraction",
            Error::NotConverged { .. } => "NotConverged",
            Error::HorizonTooLarge(_) => "HorizonTooLarge",
            Error::OutsideTrustRegion { .. } => "OutsideTrustRegion",
            Error::OffsetNotTangential(_) => "OffsetNotTangential",
            Error::UnknownScenario(_) => "UnknownScenario",
            Error::Parse { .. } => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Io(_) => "IoError",
        }
    }

    /// True for errors caused by the configuration rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::UnknownScenario(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
