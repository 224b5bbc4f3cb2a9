//! Mean Teacher for a few averaging coefficients, next to the Π-model.
//!
//! cargo run --release --example mean_teacher

use manifold_ssl::experiments::HmmConfig;
use manifold_ssl::manifold::Augmentation;
use manifold_ssl::training::{relative_gap, train_mean_teacher, train_pi_model, TrainConfig};

fn main() -> manifold_ssl::Result<()> {
    let task = HmmConfig::default().build()?;
    let data = task.dataset(1)?;
    let config = TrainConfig::default();
    let augmenter = Augmentation::new(&task.map, config.augmentation);

    let pi = train_pi_model(&config, &data, &augmenter)?;
    println!("pi-model          nll {:.4}", pi.final_record().test_nll);

    for beta in [0.9, 0.99, 0.995] {
        let mt = train_mean_teacher(&config, &data, &augmenter, beta)?;
        let teacher = mt.ema.as_ref().expect("teacher exists after warmup");
        println!(
            "mean teacher {beta:<5} nll {:.4}  |θ_avg - θ|/|θ| = {:.2e}",
            mt.final_record().test_nll,
            relative_gap(teacher, &mt.params)
        );
    }
    Ok(())
}
