fn main() {
    std::process::exit(utrack::cli::run(std::env::args_os()));
}
