pub mod bounds;
pub mod clock;
pub mod combine;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod net;
pub mod problem;
pub mod rng;
pub mod sim;
pub mod worker;

pub use error::{AtgError, Result};
