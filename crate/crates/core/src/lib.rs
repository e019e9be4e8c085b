pub mod algebra;
pub mod channel;
pub mod choi;
pub mod config;
pub mod error;
pub mod gen;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod state;
pub mod sufficiency;

pub use config::Tolerances;
pub use error::{Error, Result};
