fn main() {
    std::process::exit(asep_core::cli::main_with_args(std::env::args_os()));
}
