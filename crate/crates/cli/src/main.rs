use clap::Parser;

fn main() {
    let cli = neurop_cli::Cli::parse();
    if let Err(e) = neurop_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
