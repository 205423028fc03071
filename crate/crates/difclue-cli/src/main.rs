fn main() {
    std::process::exit(difclue::cli::run(std::env::args_os()));
}
