pub mod attack;
pub mod channel;
pub mod config;
pub mod env;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod nn;
pub mod noma;
pub mod rng;
pub mod system;
pub mod training;

pub use error::{Error, Result};
