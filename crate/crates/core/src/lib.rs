//! Spatiotemporal refinement of per-class probability maps for multitemporal
//! land-cover classification.
//!
//! The crate is organised along the processing chain:
//!
//! * [`raster`]: grids, multiband images, label rasters, band math and I/O.
//! * [`stack`]: per-date scenes and the ordered temporal stack.
//! * [`preprocess`]: DSM co-registration and nDSM extraction.
//! * [`propagation`]: training-label propagation across dates.
//! * [`filter`]: the iterative spatiotemporal bilateral filter on probability cubes.
//! * [`evaluation`]: confusion matrices, accuracy curves and probability trajectories.
//! * [`synthetic`]: deterministic test scenes and the brute-force reference filter.
//! * [`pipeline`]: configuration and the end-to-end driver.

pub mod error;
pub mod evaluation;
pub mod filter;
pub mod pipeline;
pub mod preprocess;
pub mod propagation;
pub mod raster;
pub mod stack;
pub mod synthetic;
pub mod workers;

pub use error::{Error, Result};
