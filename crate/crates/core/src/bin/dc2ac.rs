fn main() {
    std::process::exit(dc2ac::cli::run(std::env::args_os()));
}
