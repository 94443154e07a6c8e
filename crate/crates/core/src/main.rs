use clap::Parser;

use blockmodel::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
