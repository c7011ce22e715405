fn main() {
    std::process::exit(fairbads_cli::main_with_args(std::env::args_os()));
}
