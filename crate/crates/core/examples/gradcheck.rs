//! Central differences against every analytic gradient in the crate.
//!
//! cargo run --release --example gradcheck

use manifold_ssl::experiments::{gradcheck_suite, GradcheckConfig};

fn main() -> manifold_ssl::Result<()> {
    let config = GradcheckConfig::default();
    for row in gradcheck_suite(&config)? {
        println!(
            "{:<26} {:>4} instances  max rel err {:.2e}  {}",
            row.objective,
            row.instances,
            row.max_rel_error,
            if row.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
