fn main() {
    std::process::exit(geq_core::cli::main_with_args(std::env::args_os()));
}
