fn main() {
    std::process::exit(sne::cli::run_from(std::env::args_os()));
}
