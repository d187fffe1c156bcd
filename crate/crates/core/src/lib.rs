pub mod basis;
pub mod bayes;
pub mod error;
pub mod fbm;
pub mod harness;
pub mod hurst;
pub mod io;
pub mod mle;
pub mod quad;
pub mod special;
pub mod transform;

pub use error::{Error, Result};
