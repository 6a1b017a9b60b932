use clap::Parser;

fn main() {
    let cli = catbn_cli::cli::Cli::parse();
    if let Err(e) = catbn_cli::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
