use thiserror::Error;

use crate::params::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigenvalue computation did not converge")]
    EigenFailure,

    #[error("non-finite state value {0}")]
    NonFinite(f64),

    #[error("symbol {symbol} outside alphabet of size {bins}")]
    SymbolOutOfRange { symbol: u32, bins: u32 },

    #[error("covariance eigenvalue {eigenvalue} exceeds spectral bound {bound}")]
    SpectrumExceeded { eigenvalue: f64, bound: f64 },

    #[error("covariance is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),

    #[error("pair is not stabilizable: unstable mode {re}{im:+}i is not reachable by the control")]
    NotStabilizable { re: f64, im: f64 },

    #[error("control decomposition failed: {0}")]
    Singular(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("i/o: {0}")]
    Io(String),

    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}
