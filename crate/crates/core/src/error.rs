use std::path::PathBuf;

/// Errors produced by the simulator and its analysis routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("antenna index {index} out of range 1..={nt}")]
    AntennaOutOfRange { index: usize, nt: usize },

    #[error("symbol {0} is not a point of the constellation")]
    SymbolNotInConstellation(num_complex::Complex64),

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("matrix has a significantly negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),

    #[error("exhaustive search over {candidates} candidates exceeds the cap of {cap}")]
    SearchSpaceTooLarge { candidates: f64, cap: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed measurement file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category, used by front ends to pick an exit status.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Format(_) => ErrorCategory::Format,
            Error::SearchSpaceTooLarge { .. } => ErrorCategory::Infeasible,
            Error::Config(_) | Error::InvalidParameter(_) | Error::Dimension(_) => {
                ErrorCategory::Config
            }
            _ => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Format,
    Infeasible,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Format => "format",
            ErrorCategory::Infeasible => "infeasible",
            ErrorCategory::Numeric => "numeric",
        })
    }
}
