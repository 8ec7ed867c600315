fn main() {
    adlex::cli::init_logging();
    std::process::exit(adlex::cli::run(std::env::args_os()));
}
