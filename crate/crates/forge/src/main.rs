fn main() {
    std::process::exit(bonsai_forge::cli::run(std::env::args_os()));
}
