fn main() {
    std::process::exit(herdlab::cli::main_with_args(std::env::args_os()));
}
