fn main() {
    std::process::exit(dephasimeter::cli::main_from_args(std::env::args_os()));
}
