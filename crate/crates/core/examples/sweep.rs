//! Seed-averaged sweep over one axis, printed as the summary CSV.
//!
//! cargo run --release --example sweep -- epsilon 0.03,0.3,1.0 [seeds] [jobs]

use manifold_ssl::experiments::{run_sweep, HmmConfig, SweepAxis, SweepSpec};
use manifold_ssl::training::TrainConfig;

fn main() -> manifold_ssl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let axis: SweepAxis = args.first().map_or("lambda", String::as_str).parse().expect("axis");
    let values = args
        .get(1)
        .map_or("0.5,1,5,10,50", String::as_str)
        .split(',')
        .map(|v| v.parse().expect("value"))
        .collect();
    let n_seeds: u64 = args.get(2).map_or(3, |s| s.parse().expect("seed count"));
    let jobs: usize = args.get(3).map_or(1, |s| s.parse().expect("jobs"));

    let spec = SweepSpec {
        base: TrainConfig::default(),
        axis,
        values,
        seeds: (1..=n_seeds).collect(),
    };
    let task = HmmConfig::default().build()?;
    let out = run_sweep(&spec, &task, jobs)?;
    print!("{}", out.summary_csv());
    for row in &out.summary {
        println!("{axis}={}: {:.4} ± {:.4} (se)", row.axis_value, row.mean_final_nll, row.std_error());
    }
    for (id, err) in out.failures() {
        eprintln!("{id} failed: {err}");
    }
    Ok(())
}
