fn main() {
    std::process::exit(divsample::cli::main_with_args(std::env::args_os()));
}
