fn main() {
    std::process::exit(driftguard::cli::run(std::env::args_os()));
}
