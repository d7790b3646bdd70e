fn main() {
    std::process::exit(mixfact_cli::run(std::env::args_os()));
}
