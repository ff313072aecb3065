fn main() {
    std::process::exit(tollflow::cli::run(std::env::args_os()));
}
