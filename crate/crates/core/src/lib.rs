//! Adaptive inference scheduling for flow-matching edit samplers.
//!
//! The crate splits the sampler into small, separately testable pieces:
//!
//! * [`latent`] dense latent frames, seeded Gaussian noise, the linear
//!   interpolant and uniform timestep schedules.
//! * [`card`] instruction complexity prediction (keyword rule) and soft
//!   allocation of the reasoning budget `(steps, frames)`.
//! * [`srm`] cross-attention aggregation, sigmoid thresholding and Gaussian
//!   smoothing into a spatial reasoning mask.
//! * [`rpfi`] noise-matched injection of the reference latent outside the mask.
//! * [`sampler`] the two-stage Euler sampler with frame-step cost accounting.
//! * [`toy`] a closed-form oracle backbone and synthetic scenarios.
//! * [`harness`] suite configuration, metrics and CSV/JSON reports.

pub mod card;
pub mod error;
pub mod harness;
pub mod latent;
pub mod rpfi;
pub mod sampler;
pub mod srm;
pub mod toy;

pub use error::{Error, Result};
