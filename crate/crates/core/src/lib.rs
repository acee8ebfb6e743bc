pub mod error;
pub mod eval;
pub mod graph;
pub mod grounding;
pub mod kb;
pub mod merger;
pub mod mining;
pub mod predictor;
pub mod ranker;
pub mod synthetic;

pub use error::{Error, Result};
