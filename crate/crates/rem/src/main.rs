fn main() {
    std::process::exit(rem::cli::run(std::env::args_os()));
}
