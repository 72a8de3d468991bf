use clap::Parser;
use seggrow::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
