pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use tensor::{Precision, Scalar, Tensor};
pub mod cascade;
pub mod commands;
pub mod config;
pub mod dataio;
pub mod metrics;
pub mod model;
pub mod train;
mod binio;
