pub mod adversary;
pub mod apportion;
pub mod corpus;
pub mod denoiser;
pub mod diffnet;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod obfuscator;
pub mod rng;
pub mod surrogate;
pub mod world;

pub use error::{Error, Result};
