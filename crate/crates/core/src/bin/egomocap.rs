fn main() {
    std::process::exit(egomocap::cli::run(std::env::args_os()));
}
