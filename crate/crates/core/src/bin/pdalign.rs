fn main() {
    std::process::exit(pdalign::cli::run(std::env::args_os()));
}
