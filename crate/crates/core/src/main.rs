fn main() {
    std::process::exit(blockreg::cli::main_with_args(std::env::args_os()));
}
