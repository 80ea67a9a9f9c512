pub mod core_net;
pub mod dataio;
pub mod error;
pub mod glimpse;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod policy;
pub mod regressor;
pub mod trainer;

pub use error::{Error, Result};
