//! Small-ε behaviour of the consistency term: Monte Carlo estimates against
//! the exact tangent Jacobian penalty.
//!
//! cargo run --release --example jacobian_limit -- [draws]

use manifold_ssl::experiments::{jacobian_limit_study, JacobianLimitConfig};

fn main() -> manifold_ssl::Result<()> {
    let mut config = JacobianLimitConfig::default();
    if let Some(d) = std::env::args().nth(1) {
        config.draws = d.parse().expect("draws");
    }
    let report = jacobian_limit_study(&config)?;
    for (eps, bias) in report.epsilons.iter().zip(&report.mean_bias) {
        println!("eps {eps:<6} mean |mc/eps² - linearised| / exact = {bias:.3e}");
    }
    println!("log-log bias slope {:.3}", report.bias_slope);
    println!("worst relative error at the smallest eps {:.4}", report.max_rel_error);
    Ok(())
}
