pub mod blend;
pub mod cloth;
pub mod dataset;
pub mod distance_field;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod partition;
pub mod pipeline;
pub mod rig;
pub mod seed;
pub mod ssdf;
pub mod shapes;

pub use error::{Error, Result};
