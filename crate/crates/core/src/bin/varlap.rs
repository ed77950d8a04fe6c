fn main() {
    std::process::exit(varlap::cli::run(std::env::args_os()));
}
