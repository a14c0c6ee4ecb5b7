pub mod data;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod pe;
pub mod poly;
pub mod resilience;
pub mod sdp;

pub use error::{Error, Result};
