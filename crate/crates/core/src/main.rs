fn main() {
    std::process::exit(leafdecomp::cli::run(std::env::args_os()));
}
