//! Supervised baseline against the Π-model on the default task.
//!
//! cargo run --release --example pi_model -- [seed]

use manifold_ssl::experiments::HmmConfig;
use manifold_ssl::manifold::Augmentation;
use manifold_ssl::training::{train_pi_model, train_supervised, Method, TrainConfig};

fn main() -> manifold_ssl::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed"));
    let task = HmmConfig::default().build()?;
    let data = task.dataset(seed)?;

    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let augmenter = Augmentation::new(&task.map, config.augmentation);

    let sup = train_supervised(
        &TrainConfig {
            method: Method::Supervised,
            ..config.clone()
        },
        &data,
    )?;
    let pi = train_pi_model(&config, &data, &augmenter)?;

    println!("epoch  supervised_nll  pi_nll  pi_consistency");
    for (s, p) in sup.records.iter().zip(&pi.records).step_by(20) {
        println!(
            "{:>5}  {:>14.4}  {:>6.4}  {:>14.5}",
            s.epoch, s.test_nll, p.test_nll, p.consistency_value
        );
    }
    let (s, p) = (sup.final_record(), pi.final_record());
    println!("final: supervised nll {:.4} acc {:.4}", s.test_nll, s.test_acc);
    println!("final: pi-model   nll {:.4} acc {:.4}", p.test_nll, p.test_acc);
    Ok(())
}
