//! Shared numerical substrate: random streams, dense helpers, finite
//! differences and RK4.

pub mod gradcheck;
pub mod linalg;
pub mod ode;
pub mod rng;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use linalg::Matrix;
pub use ode::{rk4_step, rk4_trajectory};
pub use rng::Rng;
