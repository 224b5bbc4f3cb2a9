//! Scripted experiments built on the training drivers.

pub mod fluid;
pub mod gradcheck;
pub mod harmonic;
pub mod hmm;
pub mod jacobian;
pub mod metrics;
pub mod sweep;

pub use fluid::{fluid_limit_experiment, FluidLimitConfig, FluidLimitRow};
pub use gradcheck::{gradcheck_suite, GradcheckConfig, GradcheckRow};
pub use harmonic::{harmonic_experiment, HarmonicConfig, HarmonicReport};
pub use hmm::{HmmConfig, HmmTask};
pub use jacobian::{jacobian_limit_study, JacobianLimitConfig, JacobianLimitReport};
pub use metrics::{evaluate, Metrics};
pub use sweep::{run_sweep, SweepAxis, SweepOutput, SweepSpec, SummaryRow};
