fn main() {
    std::process::exit(multidefault::cli::run_command(std::env::args()));
}
