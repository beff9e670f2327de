//! File formats, data generation and the command pipeline around
//! [`dast_core`].

pub mod artifacts;
pub mod cache;
pub mod checkpoint;
pub mod cmapss;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod synthetic;

pub use error::{Error, Result};
