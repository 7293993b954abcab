//! Dataset assembly and staged, cached artifact production.

pub mod dataset;
pub mod manifest;
pub mod stages;

pub use dataset::*;
pub use manifest::*;
pub use stages::*;
