fn main() {
    std::process::exit(sembed_cli::run(std::env::args_os()));
}
