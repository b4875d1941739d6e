//! Command-line entry point for the volatility-surface smoothing toolkit.

fn main() {
    std::process::exit(volsmooth::cli::run_cli(std::env::args()));
}
