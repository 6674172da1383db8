use clap::Parser;

fn main() {
    let cli = carosegd_gateway::cli::Cli::parse();
    std::process::exit(carosegd_gateway::cli::run(cli));
}
