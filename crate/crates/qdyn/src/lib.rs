//! File formats, dataset directories, checkpoints and the command-line
//! driver around [`qdyn_core`].

pub mod backend;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod fsutil;
pub mod trajfile;

pub use error::{QdynError, Result};
