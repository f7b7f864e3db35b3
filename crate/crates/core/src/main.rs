fn main() {
    std::process::exit(rda_core::cli::run(std::env::args_os()));
}
