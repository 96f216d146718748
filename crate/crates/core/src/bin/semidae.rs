fn main() {
    std::process::exit(semidae::cli::run_from(std::env::args_os()));
}
