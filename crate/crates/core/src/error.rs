use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad arguments, out-of-range indices, mismatched dimensions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value from system `{system}` at t={t}, x={x:?}")]
    NumericalDomain { system: String, t: f64, x: Vec<f64> },

    #[error("integration blew up at step {step} (t={t}, method={method}, h={h})")]
    BlowUp {
        step: usize,
        t: f64,
        method: String,
        h: f64,
    },

    #[error(
        "reference for `{system}` not certified: discrepancy {discrepancy:e} > tolerance {tolerance:e} after {halvings} halvings"
    )]
    ReferencePrecision {
        system: String,
        discrepancy: f64,
        tolerance: f64,
        halvings: usize,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn usage<T: ToString>(msg: T) -> Self {
        Error::Usage(msg.to_string())
    }

    /// Process exit code: 1 usage, 2 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Io(_) => 1,
            Error::NumericalDomain { .. } | Error::BlowUp { .. } | Error::ReferencePrecision { .. } => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
