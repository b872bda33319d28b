use autolyap::cli;
use clap::Parser;

fn main() {
    cli::init_threads();
    let args = cli::Cli::parse();
    std::process::exit(cli::run(&args));
}
