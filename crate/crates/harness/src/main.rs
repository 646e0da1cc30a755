use clap::Parser;

fn main() {
    let cli = wloss_harness::cli::Cli::parse();
    if let Err(err) = wloss_harness::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
