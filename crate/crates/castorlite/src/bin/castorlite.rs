fn main() {
    std::process::exit(castorlite::cli::main_with_args(std::env::args_os()));
}
