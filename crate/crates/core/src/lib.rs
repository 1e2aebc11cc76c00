pub mod envs;
pub mod error;
pub mod eval;
pub mod exec;
pub mod harness;
pub mod partition;
pub mod pasa;
pub mod rng;
pub mod sarsa;

pub use error::{Error, Result};
