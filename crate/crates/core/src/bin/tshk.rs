fn main() {
    std::process::exit(tshk::cli::run(std::env::args_os()));
}
