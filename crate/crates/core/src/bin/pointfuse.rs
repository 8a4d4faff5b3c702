fn main() {
    std::process::exit(pointfuse::cli::run(std::env::args_os()));
}
