//! Leaf decomposition of 1-Lipschitz maps, chart construction,
//! disintegration of weighted measures along leaves and numerical
//! curvature-dimension checks.

pub mod error;
pub mod linalg;
pub mod lipmap;
pub mod leafdetect;
pub mod geometry;
pub mod chart;
pub mod disintegrate;
pub mod cdcheck;
pub mod cli;

pub use error::{Error, Result};
