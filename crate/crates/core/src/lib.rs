pub mod autodiff;
pub mod corpus;
pub mod distant;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
