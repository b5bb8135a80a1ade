pub mod cli;
pub mod clustering;
pub mod data;
pub mod error;
pub mod eval;
pub mod infometrics;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod weighting;

pub use error::{Error, Result};
