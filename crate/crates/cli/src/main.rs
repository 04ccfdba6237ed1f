use clap::Parser;

fn main() {
    let cli = drivenet_cli::Cli::parse();
    if let Err(e) = drivenet_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
