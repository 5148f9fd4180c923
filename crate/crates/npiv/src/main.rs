use clap::Parser;

fn main() {
    env_logger::init();
    let cli = npiv::cli_io::Cli::parse();
    std::process::exit(npiv::cli_io::run(cli));
}
