fn main() {
    std::process::exit(tt_lindblad::cli::run(std::env::args_os()));
}
