fn main() {
    std::process::exit(ecd::cli::run(std::env::args_os()));
}
