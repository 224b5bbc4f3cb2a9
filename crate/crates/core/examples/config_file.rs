//! Parse a config file (or a built-in example) and print the resolved form.
//!
//! cargo run --release --example config_file -- [path]

use manifold_ssl::config::{key_reference, Config};

const SAMPLE: &str = "\
# Mean Teacher with a weaker augmentation
[train]
method = mt
epsilon = 0.1
beta_mt = 0.95

[sweep]
axis = beta_mt
values = 0.9, 0.95, 0.99
seeds = 1..3
";

fn main() {
    let parsed = match std::env::args().nth(1) {
        Some(path) => Config::load(path.as_ref()),
        None => Config::parse(SAMPLE),
    };
    match parsed {
        Ok(config) => print!("{}", config.render()),
        Err(e) => {
            eprintln!("{e}");
            eprint!("{}", key_reference());
            std::process::exit(1);
        }
    }
}
