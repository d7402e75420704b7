fn main() {
    std::process::exit(emoctx::cli::run_command(std::env::args_os()));
}
