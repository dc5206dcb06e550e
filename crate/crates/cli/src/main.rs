use clap::Parser;
use metaqed_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("metaqed: {e}");
            1
        }
    };
    std::process::exit(code);
}
