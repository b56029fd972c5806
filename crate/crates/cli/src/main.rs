use clap::Parser;

fn main() {
    let cli = utime_cli::Cli::parse();
    utime_cli::init_logging(cli.verbose);
    if let Err(e) = utime_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
