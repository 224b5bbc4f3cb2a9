//! On-manifold against ambient augmentation: how far each leaves the data
//! manifold, and how much of the latent space a k-dimensional scheme covers.
//!
//! cargo run --release --example augmentation

use manifold_ssl::experiments::HmmConfig;
use manifold_ssl::manifold::{augment, AugmentMode, AugmentationSpec, Manifold};
use manifold_ssl::numerics::rng::{streams, Rng};

fn main() -> manifold_ssl::Result<()> {
    let task = HmmConfig::default().build()?;
    let data = task.dataset(1)?;
    let sample = &data.unlabelled[0];
    let mut rng = Rng::new(1, streams::AUGMENT);

    for (mode, k) in [(AugmentMode::Manifold, 10), (AugmentMode::Manifold, 5), (AugmentMode::Ambient, 10)] {
        let spec = AugmentationSpec { epsilon: 0.3, k, mode };
        let mut shift = 0.0;
        for _ in 0..100 {
            let x = augment(&task.map, &sample.z, &sample.x, &spec, &mut rng)?;
            shift += x.iter().zip(&sample.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        let label = match mode {
            AugmentMode::Manifold => format!("manifold k={k}"),
            AugmentMode::Ambient => "ambient".to_string(),
        };
        println!("{label:<14}: mean displacement {:.4}", shift / 100.0);
    }

    // Manifold draws are images Φ(z + εω); the tangent space at z has rank d.
    let j = task.map.jacobian(&sample.z)?;
    println!("tangent Jacobian {} x {}", j.rows(), j.cols());
    Ok(())
}
