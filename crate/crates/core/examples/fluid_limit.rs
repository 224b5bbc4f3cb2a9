//! Full-batch SGD against the gradient-flow ODE for shrinking step sizes.
//!
//! cargo run --release --example fluid_limit

use manifold_ssl::experiments::fluid::fluid_csv;
use manifold_ssl::experiments::{fluid_limit_experiment, FluidLimitConfig};

fn main() -> manifold_ssl::Result<()> {
    let rows = fluid_limit_experiment(&FluidLimitConfig::default())?;
    print!("{}", fluid_csv(&rows));
    for w in rows.windows(2) {
        println!(
            "eta {} -> {}: distance shrinks by {:.2}",
            w[0].eta,
            w[1].eta,
            w[0].mean_distance / w[1].mean_distance
        );
    }
    Ok(())
}
