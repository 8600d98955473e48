fn main() {
    std::process::exit(metahsi::cli::run(std::env::args_os()));
}
