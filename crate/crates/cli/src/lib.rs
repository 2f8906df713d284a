//! Command-line and HTTP front end for scatterfit model files.

pub mod error;
pub mod fitcmd;
pub mod grid;
pub mod modelfile;
pub mod plot;
pub mod service;
pub mod simulate;

pub use error::CliError;
pub use modelfile::{ModelFile, Workspace};
