pub mod approx;
pub mod counting;
pub mod error;
pub mod experiment;
pub mod sampler;
pub mod sring;
pub mod verify;
pub mod volume;

pub use error::{Error, Result};
