fn main() {
    std::process::exit(jointlk::harness::cli::run_cli(std::env::args_os()));
}
