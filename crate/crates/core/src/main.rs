use clap::Parser;

fn main() {
    let cli = canids::cli::Cli::parse();
    if let Err(err) = canids::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(canids::cli::exit_code(&err));
    }
}
