fn main() {
    std::process::exit(nodec::cli::run(std::env::args_os()));
}
