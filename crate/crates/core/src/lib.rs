//! Hierarchical text classification for Urdu news.

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod strategies;

pub use error::{Error, Result};
