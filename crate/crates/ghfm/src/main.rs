fn main() {
    std::process::exit(ghfm::cli::run(std::env::args_os()));
}
