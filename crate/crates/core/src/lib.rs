pub mod autodiff;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod scalar;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
pub use scalar::Scalar;
