use thiserror::Error;

use crate::datamodel::DataError;
use crate::numerics::NumericsError;

/// Errors raised by the model, training, grounding and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
