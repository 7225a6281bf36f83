//! Tempered exponential dichotomies of discrete-time random linear cocycles.

pub mod admissibility;
pub mod dynamics;
pub mod error;
pub mod green;
mod linalg;
pub mod roughness;
pub mod spectrum;
pub mod weighted;

pub use error::{Error, Result};
