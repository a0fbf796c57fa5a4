fn main() {
    std::process::exit(microvoc_cli::run(std::env::args_os()));
}
