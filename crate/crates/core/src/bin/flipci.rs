fn main() {
    std::process::exit(flipci::cli::run(std::env::args_os()));
}
