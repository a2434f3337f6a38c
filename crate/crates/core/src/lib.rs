pub mod cli;
pub mod error;
pub mod inference;
pub mod models;
pub mod nnet;
pub mod problem;
pub mod rng;
pub mod soed;
pub mod state;

pub use error::{Error, Result};
