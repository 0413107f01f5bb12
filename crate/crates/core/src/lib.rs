//! Semantic change detection for bi-temporal imagery.

mod error;

pub mod cbam;
pub mod cli;
pub mod datamodel;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
