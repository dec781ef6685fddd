pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod export;
pub mod geometry;
pub mod language;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
