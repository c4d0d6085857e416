fn main() {
    std::process::exit(rulrl_cli::run(std::env::args_os()));
}
