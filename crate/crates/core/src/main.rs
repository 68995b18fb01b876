fn main() {
    std::process::exit(blindcount::cli::run(std::env::args_os()));
}
