//! Library side of the `ppba` binary: configuration, file formats and the
//! mode implementations.

pub mod commands;
pub mod config;
pub mod policy;
pub mod scenes;
