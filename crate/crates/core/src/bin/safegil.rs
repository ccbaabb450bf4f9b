fn main() {
    std::process::exit(safegil::cli::main_with_args(std::env::args_os()));
}
