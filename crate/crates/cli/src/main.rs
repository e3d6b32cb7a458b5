fn main() {
    std::process::exit(crt_cli::run(std::env::args_os()));
}
