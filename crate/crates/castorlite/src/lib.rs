//! HTTP service, operator CLI and builtin runner around `castorlite-core`.

pub mod api;
pub mod cli;
pub mod client;
pub mod config;
pub mod harness;
pub mod runner;
pub mod service;
