fn main() {
    std::process::exit(neucolor::cli::main_with_args(std::env::args_os()));
}
