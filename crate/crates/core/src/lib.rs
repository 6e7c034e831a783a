//! Hierarchical topic models over a nested Chinese restaurant process, fitted
//! by collapsed Gibbs sampling.

pub mod checkpoint;
pub mod corpus;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod hyper;
pub mod lda;
pub mod sampler;
pub mod simulate;
pub mod tree;

pub use error::{Error, Result};
