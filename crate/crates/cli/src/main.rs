fn main() {
    std::process::exit(savo_cli::run(std::env::args_os()));
}
