//! Learning a visual task function from demonstration frames and servoing
//! a robot with it.
//!
//! * [`nn`]: dense network hosting the task function.
//! * [`vision`]: frames, modular state changes, network input encoding.
//! * [`sim`]: simulated workcell, scripted demonstrator, perturbations.
//! * [`irl`]: transition-level maximum-entropy IRL trainer.
//! * [`uvs`]: uncalibrated visual servoing with Broyden updates.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod irl;
pub mod nn;
pub mod sim;
pub mod uvs;
pub mod vision;

pub use error::{Error, Result};
