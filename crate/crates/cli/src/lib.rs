//! File formats, experiment drivers and the `thorax` command-line tool for
//! [`thorax_core`].

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod pipeline;
pub mod tables;

pub use error::{IoError, IoResult};
