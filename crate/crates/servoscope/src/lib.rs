//! File formats, experiment pipeline and command-line front-end for
//! [`servoscope_core`].
//!
//! - [`weights`]: binary network weights
//! - [`pgm`], [`demos`]: demonstration frames and manifests
//! - [`config`]: JSON experiment configuration
//! - [`pipeline`]: demo generation, training, trials and suites
//! - [`report`]: CSV outputs
//! - [`cli`]: the `servoscope` command

pub mod cli;
pub mod config;
pub mod demos;
pub mod error;
pub mod pgm;
pub mod pipeline;
pub mod report;
pub mod weights;

pub use error::{HarnessError, Result};
pub use servoscope_core as core;
