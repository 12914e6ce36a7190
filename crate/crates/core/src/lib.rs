pub mod data;
pub mod error;
pub mod interventions;
pub mod metrics;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
