//! Radio environment map (REM) prediction toolkit.
//!
//! The crate covers synthetic city layouts, a log-distance propagation oracle,
//! fractional line-of-sight maps, a small u-net trained from scratch, the
//! preprocessing and training pipeline around it, evaluation metrics, and
//! LSF-driven access point selection for cell-free massive MIMO.

pub mod aso;
pub mod error;
pub mod geo;
pub mod grid;
pub mod los;
pub mod metrics;
pub mod nn;
pub mod pgm;
pub mod pipeline;
pub mod propagation;

pub use error::{Error, Result};
pub use geo::{CityMap, MapBundle, TxSite};
pub use grid::Grid;
