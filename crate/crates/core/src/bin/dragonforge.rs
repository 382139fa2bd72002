fn main() {
    std::process::exit(dragonforge::cli::run(std::env::args_os()));
}
