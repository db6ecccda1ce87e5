//! Experiment front end for the architect-builder library: configuration,
//! training runs on disk, evaluation, oracles and protocol inspection.

pub mod commands;
pub mod config;
pub mod instance;
pub mod run;
