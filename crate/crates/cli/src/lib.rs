//! Configuration parsing, run dispatch and tabular output for the `qscope`
//! command-line tool.

pub mod commands;
pub mod config;
pub mod output;
