fn main() {
    std::process::exit(reef::cli::main_with_args(std::env::args_os()));
}
