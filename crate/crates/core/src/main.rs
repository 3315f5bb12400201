fn main() {
    std::process::exit(probdiar::cli::main_with_args(std::env::args_os()));
}
