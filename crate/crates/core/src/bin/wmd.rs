fn main() {
    std::process::exit(wmd::cli::main_with_args(std::env::args_os()));
}
