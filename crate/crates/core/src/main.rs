fn main() {
    std::process::exit(monocert::cli::main_with_args(std::env::args_os()));
}
