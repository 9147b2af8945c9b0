//! File formats, run directories, CLI and HTTP service around
//! [`surveil_core`].

pub mod artifacts;
pub mod cli;
pub mod error;
pub mod io;
pub mod jobs;
pub mod runs;
pub mod service;

pub use error::{AppError, AppResult};
