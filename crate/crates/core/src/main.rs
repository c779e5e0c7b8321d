use clap::Parser;

fn main() {
    let cli = crossbrain::cli::Cli::parse();
    std::process::exit(crossbrain::cli::run(cli));
}
