pub mod cli;
pub mod derivatives;
pub mod error;
pub mod geometry;
pub mod geope;
pub mod grape;
pub mod hyperopt;
pub mod linalg;
pub mod model;
pub mod pauli;
pub mod trace;

pub use error::{Error, Result};
