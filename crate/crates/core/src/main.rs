fn main() {
    std::process::exit(chaotic::cli::main_with(std::env::args_os()));
}
