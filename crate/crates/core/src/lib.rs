//! Multiscale geometry on finite weighted point clouds: regularity, dyadic
//! cubes, Carleson packing, coronizations, big pieces and β-numbers, in the
//! Euclidean and the parabolic metric.

pub mod beta;
pub mod bigpieces;
pub mod carleson;
pub mod corona;
pub mod dyadic;
pub mod error;
pub mod fixtures;
pub mod index;
pub mod metric;
pub mod parabolic;
pub mod space;

pub use error::{Error, Result};
pub use metric::Metric;
pub use space::{RegularityReport, WeightedSet};
