//! File formats, the remote judge client and the command-line driver around
//! [`pgrpo_core`].

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod judge;
pub mod logs;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
pub use pgrpo_core as core;
