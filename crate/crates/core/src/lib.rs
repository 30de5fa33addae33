pub mod error;
pub mod lti;

pub use error::{Error, Result};
pub mod fixtures;
pub mod ga;
pub mod gp;
pub mod pipeline;
pub mod reduction;
mod rng;
pub mod robustness;
pub mod rules;
mod serde_ext;
pub mod sim;
