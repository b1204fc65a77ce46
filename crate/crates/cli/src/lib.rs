//! Command-line front end for the non-local homogenization laboratory:
//! configuration parsing, result persistence, and the verification suite.

pub mod commands;
pub mod config;
pub mod outputs;
pub mod verify;
