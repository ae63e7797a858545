pub mod error;
pub mod geometry;
pub mod integrator;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod scene;
pub mod stat_model;

pub use error::{Error, Result};
