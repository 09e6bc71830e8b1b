//! Link prediction on knowledge graphs with anonymised random walks.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod nn;
pub mod petals;
pub mod record;
pub mod rng;
pub mod train;
pub mod verify;
pub mod walk;

pub use error::{FlockError, Result};
