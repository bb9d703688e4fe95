//! Density-driven placement of observation sites on a gridded domain.
//!
//! The pipeline estimates how quickly observations decorrelate in space,
//! turns the per-cell effective correlation into a weight field, and places
//! sites at the generators of a centroidal Voronoi tessellation of that field.

pub mod benchmark;
pub mod correlation;
pub mod cvt;
pub mod density;
pub mod error;
pub mod grf;
pub mod grid;
pub mod io;
pub mod placement;
pub mod render;
pub mod variogram;

pub use error::{Error, Result};
