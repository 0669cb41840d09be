use clap::Parser;

fn main() {
    let args = jumpom_cli::Args::parse();
    std::process::exit(jumpom_cli::run(&args));
}
