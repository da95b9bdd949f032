use clap::Parser;
use dash_cli::args::Cli;

fn main() {
    // clap exits with code 2 on usage errors
    let cli = Cli::parse();
    if let Err(e) = dash_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
