fn main() {
    std::process::exit(rotavg::cli::run(std::env::args_os()));
}
