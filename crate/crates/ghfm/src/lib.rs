//! File formats, design caching, simulation studies and the `ghfm` command
//! line on top of `fusion-core`.

pub mod cache;
pub mod cli;
pub mod csvio;
pub mod error;
pub mod manifest;
pub mod models;
pub mod study;
pub mod tables;

pub use error::{Error, Result};
