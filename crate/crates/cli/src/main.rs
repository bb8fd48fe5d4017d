use clap::Parser;
use siftleak_cli::Cli;

fn main() {
    if let Err(e) = siftleak_cli::run(Cli::parse()) {
        eprintln!("siftleak: {}", e.to_string().replace('\n', " "));
        std::process::exit(e.exit_code());
    }
}
