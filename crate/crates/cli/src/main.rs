fn main() {
    std::process::exit(goalsteer_cli::main_with_args(std::env::args_os()));
}
