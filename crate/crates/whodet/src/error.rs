use crate::dataset::DatasetError;
use crate::imageio::ImageIoError;
use crate::store::StoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error(transparent)]
    Core(#[from] whodet_core::Error),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl AppError {
    pub fn io(path: impl Into<std::path::PathBuf>) -> impl FnOnce(std::io::Error) -> AppError {
        let path = path.into();
        move |source| AppError::Io { path, source }
    }

    fn core(&self) -> Option<&whodet_core::Error> {
        match self {
            AppError::Core(e) | AppError::Store(StoreError::Core(e)) => Some(e),
            _ => None,
        }
    }

    pub fn is_numerical(&self) -> bool {
        self.core().is_some_and(whodet_core::Error::is_numerical)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            _ if self.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
