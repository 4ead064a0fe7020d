//! Monte Carlo solvers for backward SDEs with singular terminal values.

pub mod backward;
pub mod density;
pub mod domain;
pub mod driver;
pub mod error;
pub mod grid;
pub mod model;
pub mod paths;
pub mod regression;
pub mod rng;
pub mod singular;
pub mod stats;
pub mod terminal;
pub mod validate;

pub use error::{Error, Result};
