fn main() {
    std::process::exit(morel::cli::main_with_args(std::env::args_os()));
}
