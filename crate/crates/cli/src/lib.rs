//! Pipeline commands and the HTTP service behind the `specmesh` binary.

pub mod commands;
pub mod service;

pub use commands::CommandError;
