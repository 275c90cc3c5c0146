fn main() {
    std::process::exit(cellmerge::cli::run(std::env::args_os()));
}
