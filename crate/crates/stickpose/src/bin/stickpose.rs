fn main() {
    std::process::exit(stickpose::cli::run(std::env::args_os()));
}
