use clap::Parser;

fn main() {
    let cli = finsler::cli::Cli::parse();
    std::process::exit(finsler::cli::run(cli));
}
