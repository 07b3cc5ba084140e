fn main() {
    std::process::exit(gpcopula::cli::run_from(std::env::args_os()));
}
