fn main() {
    std::process::exit(sincfb::cli::run(std::env::args_os()));
}
