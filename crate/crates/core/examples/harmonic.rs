//! Π-model on the unit square with labels f=0 on u=0 and f=1 on u=1.
//! Prints the learned profile along v = 0.5 next to the harmonic f(u,v) = u.
//!
//! cargo run --release --example harmonic

use manifold_ssl::experiments::{harmonic_experiment, HarmonicConfig};

fn main() -> manifold_ssl::Result<()> {
    let config = HarmonicConfig::default();
    let report = harmonic_experiment(&config)?;

    println!("   u    f(u,0.5)");
    for row in report.trained.rows.iter().filter(|r| (r.v - 0.5).abs() < 1e-9) {
        println!("{:>5.2}  {:>8.4}", row.u, row.f);
    }
    for (epoch, energy) in report.dirichlet_energy.iter().step_by(config.epochs / 10) {
        println!("epoch {epoch:>5}: Dirichlet energy {energy:.4}");
    }
    println!(
        "rms error {:.4} (init {:.4}), mean |Δf| {:.4} (init {:.4})",
        report.trained.rms_error,
        report.initial.rms_error,
        report.trained.mean_abs_laplacian,
        report.initial.mean_abs_laplacian
    );
    Ok(())
}
