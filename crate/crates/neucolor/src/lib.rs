//! Dataset, mesh, image and checkpoint formats, run configuration and the
//! command line around [`neucolor_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod ply;
pub mod run;
pub mod synth_io;

pub use error::{Error, Result};
pub use neucolor_core as core;
