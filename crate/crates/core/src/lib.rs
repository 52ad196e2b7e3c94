//! Temperature-drift compensation for six-axis force/torque sensors.

pub mod cli;
pub mod datagen;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod suite;
pub mod training;

pub use error::{Error, Result};
