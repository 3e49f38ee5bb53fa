fn main() {
    std::process::exit(cleanprio_cli::run_cli(std::env::args_os()));
}
