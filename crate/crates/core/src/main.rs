fn main() {
    std::process::exit(maskseg::cli::run(std::env::args_os()));
}
