//! Market, mortality, path-simulation, backward-equation and verification
//! machinery for optimal investment, consumption and life-insurance under
//! inflation-linked assets with jump risk.

pub mod error;
pub mod evaluate;
pub mod generator;
pub mod market;
pub mod mortality;
pub mod optimize;
pub mod paths;
pub mod piecewise;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
