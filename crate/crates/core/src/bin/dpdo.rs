fn main() {
    std::process::exit(dpdo::cli::run(std::env::args_os()));
}
