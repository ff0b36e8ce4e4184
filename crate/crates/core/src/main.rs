fn main() {
    std::process::exit(portobello::cli::main_with_args(std::env::args_os()));
}
