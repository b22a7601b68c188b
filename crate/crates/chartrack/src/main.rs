fn main() {
    std::process::exit(chartrack::cli::run(std::env::args_os()));
}
