fn main() {
    std::process::exit(fgdiff::cli::run(std::env::args_os()));
}
