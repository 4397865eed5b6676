use clap::Parser;

fn main() {
    std::process::exit(tlight_cli::run(tlight_cli::Cli::parse()));
}
