//! Config parsing, task drivers and artifact writers behind the `sdelab` binary.

pub mod app;
pub mod config;
pub mod error;
pub mod output;
pub mod svg;
pub mod tasks;
