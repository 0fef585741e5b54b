fn main() {
    env_logger::init();
    std::process::exit(rpil::cli::run(std::env::args_os()));
}
