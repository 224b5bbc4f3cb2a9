use clap::Parser;
use manifold_ssl::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(Cli::parse()));
}
