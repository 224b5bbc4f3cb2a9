//! Consistency-based semi-supervised learning (the Π-model and Mean Teacher)
//! on the Hidden Manifold Model.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: seeded random streams, dense vector helpers, central
//!   finite differences and a fixed-step RK4 integrator.
//! - [`manifold`]: the generator `x = Φ(z)`, latent class clusters, datasets
//!   and the two augmentation modes (on-manifold and ambient).
//! - [`network`]: the single-hidden-layer learner with exact parameter and
//!   input gradients.
//! - [`objectives`]: supervised losses, the balanced consistency regularizer
//!   with stop-gradient targets, Jacobian penalties and the Dirichlet energy.
//! - [`training`]: SGD with momentum, supervised / Π-model / Mean-Teacher
//!   loops, and the full-batch gradient flow.
//! - [`experiments`]: sweeps, the unit-square harmonic experiment, the
//!   fluid-limit study and the gradient-check suite.
//! - [`config`] and [`cli`]: the declarative config format and the command
//!   line driver used by the `manifold-ssl` binary.
//!
//! Runnable walkthroughs for each capability live under `examples/`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod manifold;
pub mod network;
pub mod numerics;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
