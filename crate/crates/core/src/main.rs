fn main() {
    std::process::exit(guided_dynamics::harness::cli::run(std::env::args_os()));
}
