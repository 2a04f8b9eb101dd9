use clap::Parser;

use priorcal_cli::{run, Cli};

fn main() {
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
