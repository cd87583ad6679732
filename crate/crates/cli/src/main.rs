fn main() {
    std::process::exit(lidarloc::cli::run(std::env::args_os()));
}
