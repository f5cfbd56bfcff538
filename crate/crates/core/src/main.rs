fn main() {
    std::process::exit(urgency::cli::run(std::env::args_os()));
}
