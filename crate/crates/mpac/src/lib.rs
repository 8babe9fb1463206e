//! Command-line trainer, configuration and file formats for the
//! multi-preference actor-critic in [`mpac_core`].
//!
//! - [`config`]: TOML run configuration with pendulum defaults.
//! - [`demofile`]: line-oriented demonstration files.
//! - [`paramfile`]: binary network parameter files.
//! - [`metrics`]: per-epoch CSV output.
//! - [`checkpoint`]: resumable JSON snapshots of a run.
//! - [`run`]: the training driver tying them together.

pub mod checkpoint;
pub mod config;
pub mod demofile;
pub mod metrics;
pub mod paramfile;
pub mod run;

pub use mpac_core as core;
