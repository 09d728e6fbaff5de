fn main() {
    std::process::exit(eigopt::cli::run(std::env::args_os()));
}
