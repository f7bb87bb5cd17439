pub mod cli;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod lm;
pub mod merge;
pub mod router;
pub mod store;

pub use error::{Error, Result};
