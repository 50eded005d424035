//! Experiment harness: configuration, the uniqueness experiments, the
//! verification registry and result emission. The `spdelab` binary is a thin
//! command-line front end over [`run::execute`].

pub mod config;
pub mod emit;
pub mod error;
pub mod run;
pub mod uniqueness;
pub mod verify;

pub use config::{ConfigError, ExperimentConfig, RawConfig};
pub use error::{HarnessError, Result};
pub use run::{execute, Artifacts};
