use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] gseal_grad::GradError),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image encoding: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
