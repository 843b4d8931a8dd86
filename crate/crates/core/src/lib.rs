pub mod act2vec;
pub mod domain;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod nn;
pub mod persist;
pub mod synthgen;

pub use error::{Error, Result};
