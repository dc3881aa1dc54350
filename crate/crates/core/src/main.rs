fn main() {
    std::process::exit(seil_core::cli::run_command(std::env::args_os()));
}
