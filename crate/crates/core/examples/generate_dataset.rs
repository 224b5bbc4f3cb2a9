//! Sample a Hidden Manifold dataset, write it to disk and read it back.
//!
//! cargo run --release --example generate_dataset -- [out_dir]

use std::path::PathBuf;

use manifold_ssl::experiments::HmmConfig;
use manifold_ssl::manifold::{read_dataset, write_dataset, DatasetHeader, Manifold};

fn main() -> manifold_ssl::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("manifold-ssl-dataset"));

    let config = HmmConfig::default();
    let task = config.build()?;
    let data = task.dataset(7)?;

    let header = DatasetHeader {
        hidden_dim: Some(config.hidden_dim),
        task_seed: Some(config.task_seed),
        data_seed: Some(7),
        ..DatasetHeader::for_dataset(&data)
    };
    write_dataset(&out, &header, &data)?;
    let (_, back) = read_dataset(&out)?;
    assert_eq!(back, data);

    // Every sample sits exactly on the manifold.
    let s = &data.labelled[0];
    let x = task.map.forward(&s.z)?;
    let err = x.iter().zip(&s.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    println!(
        "d={} D={}: {} labelled, {} unlabelled, {} test -> {}",
        data.latent_dim(),
        data.ambient_dim(),
        data.labelled.len(),
        data.unlabelled.len(),
        data.test.len(),
        out.display()
    );
    println!("max |Φ(z) - x| on first sample: {err:e}");
    Ok(())
}
