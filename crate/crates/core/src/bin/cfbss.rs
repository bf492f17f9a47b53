fn main() {
    std::process::exit(cfbss::cli::run(std::env::args_os()));
}
