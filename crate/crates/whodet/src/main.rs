fn main() {
    std::process::exit(whodet::cli::run(std::env::args_os()));
}
