fn main() {
    std::process::exit(fellbundle::cli::main_with_args(std::env::args_os()));
}
