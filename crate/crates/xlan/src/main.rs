use clap::Parser;

fn main() {
    let cli = xlan::cli::Cli::parse();
    std::process::exit(xlan::cli::run(cli));
}
