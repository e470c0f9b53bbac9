use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("background statistics hold no data")]
    EmptyStats,
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("clustering error: {0}")]
    Cluster(String),
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot remove the last remaining component")]
    LastComponent,
    #[error("index {index} out of range for {len} components")]
    Index { index: usize, len: usize },
}

impl Error {
    /// True for failures of a numerical routine (factorization, solve).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
