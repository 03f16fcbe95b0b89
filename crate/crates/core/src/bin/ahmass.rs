fn main() {
    std::process::exit(ahmass::cli::main_with_args(std::env::args_os()));
}
