use clap::Parser;

fn main() {
    let cli = covsteer_cli::Cli::parse();
    std::process::exit(covsteer_cli::run(cli));
}
