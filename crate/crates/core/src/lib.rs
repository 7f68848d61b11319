pub mod attention;
pub mod bench;
pub mod cli;
pub mod error;
pub mod fsutil;
pub mod interpolant;
pub mod model;
pub mod numcore;
pub mod sampler;
pub mod sequence;
pub mod training;

pub use error::{Error, Result};
