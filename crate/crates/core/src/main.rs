fn main() {
    std::process::exit(augpt::cli::run(std::env::args_os()));
}
