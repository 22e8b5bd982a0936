//! Simulation of marked Poisson fibre systems and detection of regions whose
//! fibre directions follow a different law, by scanning a local
//! non-parametric entropy estimate over the volume and applying the 3σ-rule.

pub mod cli;
pub mod detection;
pub mod directional;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod process;
pub mod quadrature;
pub mod spatial;
pub mod stats;

pub use error::{Error, Result};
