//! Walker motion decoding from lower-body RGB-D video.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod focus;
pub mod masks;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};
