fn main() {
    std::process::exit(sonomyo::cli::main_with_args(std::env::args_os()));
}
