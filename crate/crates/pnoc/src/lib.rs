//! File formats, dataset directories, configuration and the stage runner
//! around `pnoc-core`.

pub mod cams;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod persist;
pub mod stages;

pub use error::{Error, Result};
pub use pnoc_core as core;
