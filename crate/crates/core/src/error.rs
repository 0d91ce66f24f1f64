use alloc::string::String;

use thiserror::Error;

/// Errors produced by the tensor, MPO and network layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("axis error: {0}")]
    Axis(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("invalid MPO structure: {0}")]
    Structure(String),
    #[error("capacity exceeded: {requested} elements requested, limit is {limit}")]
    Capacity { requested: usize, limit: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}
pub(crate) use shape_err;
pub(crate) use usage_err;
