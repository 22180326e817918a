fn main() {
    std::process::exit(dsnorm::cli::run(std::env::args_os()));
}
