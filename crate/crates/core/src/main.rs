fn main() {
    std::process::exit(rfpca::cli::main_with_args(std::env::args_os()));
}
