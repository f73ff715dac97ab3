use clap::Parser;
use randinv::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
