pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod trial;

pub use error::{Error, Result};
