//! Configuration files, run directories and the `cml` command line for the
//! `cml-core` simulator.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;
pub mod verify;
