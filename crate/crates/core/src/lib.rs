//! Crater template generation from elevation principal components,
//! photometric template rendering, multi-scale template matching and
//! crater-based position estimation.

pub mod eigenbasis;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod identify;
pub mod matcher;
mod par;
pub mod patch;
pub mod pipeline;
pub mod raster_io;
pub mod render;
pub mod synth;

pub use error::{Error, Result};
