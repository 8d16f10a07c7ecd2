use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("tabulated kernel has no value for lag {lag:?}")]
    MissingLag { lag: Vec<i64> },
    #[error("dense spectrum needs {n} sites but the cap is {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("spectrum is not positive semidefinite: eigenvalue {value} below tolerance {tol}")]
    NotPsd { value: f64, tol: f64 },
    #[error("arrays do not share a shape: {0}")]
    ShapeMismatch(String),
    #[error("distortion {d} outside the admissible range (0, {max})")]
    DistortionOutOfRange { d: f64, max: f64 },
    #[error("argument outside its domain: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("regional budget exceeds the total: {0}")]
    Budget(String),
    #[error("circulant embedding is not PSD (min eigenvalue {min}); increase the padding factor")]
    Embedding { min: f64 },
    #[error("sample has zero variance")]
    DegenerateSample,
    #[error("size error: {0}")]
    Size(String),
    #[error("label {0} has no tiles")]
    Label(usize),
    #[error("model file: {0}")]
    Schema(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures caused by bad input or configuration, as opposed
    /// to numerical breakdowns.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::NotPsd { .. } | Error::Embedding { .. } | Error::DegenerateSample
        )
    }
}
