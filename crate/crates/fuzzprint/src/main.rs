fn main() {
    std::process::exit(fuzzprint::cli::run(std::env::args()));
}
