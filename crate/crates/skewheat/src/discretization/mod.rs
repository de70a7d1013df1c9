//! Space-time grids, reproducible Brownian bundles, and the discrete
//! generator of the composite medium.

mod generator;
mod grid;
mod paths;

pub use generator::{discrete_generator, pairing_defect, DiscreteGenerator, SemiImplicitFactor};
pub use grid::{GridFunction, SpaceTimeGrid};
pub(crate) use paths::unit_uniform;
pub use paths::{sample_path_range, sample_paths, BrownianPaths};
