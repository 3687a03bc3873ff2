fn main() {
    std::process::exit(coretune::cli::run_from_args(std::env::args_os()));
}
