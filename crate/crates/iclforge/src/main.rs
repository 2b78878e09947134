use clap::Parser;
use iclforge::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("iclforge: {e}");
        std::process::exit(e.exit_code());
    }
}
