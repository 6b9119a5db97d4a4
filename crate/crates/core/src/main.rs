fn main() {
    std::process::exit(dsens::cli::run(std::env::args_os()));
}
