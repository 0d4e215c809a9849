//! Command-line front end: synthetic scenes, fitting, mesh extraction,
//! evaluation and the gradient oracle suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod scene;

pub use error::{CliError, CliResult};
