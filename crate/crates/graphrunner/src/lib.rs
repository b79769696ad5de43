//! File formats, HTTP providers, configuration and the batch runner around
//! `graphrunner-core`. The `graphrunner` binary is a thin layer over
//! [`app`].

pub mod app;
pub mod batch;
pub mod clients;
pub mod clock;
pub mod config;
pub mod grbench;
pub mod io;

pub use graphrunner_core as core;
