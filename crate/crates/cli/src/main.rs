fn main() {
    std::process::exit(doob_cli::run(std::env::args_os()));
}
