fn main() {
    std::process::exit(engage_cli::run(std::env::args_os()));
}
