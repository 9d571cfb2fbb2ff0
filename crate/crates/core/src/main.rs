fn main() {
    std::process::exit(spdshrink::cli::run(std::env::args_os()));
}
