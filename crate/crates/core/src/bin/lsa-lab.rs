use clap::Parser;
use lsa_icl::cli::{self, Cli};

fn main() {
    std::process::exit(cli::run(Cli::parse()));
}
