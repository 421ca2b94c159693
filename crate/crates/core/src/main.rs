fn main() {
    std::process::exit(tablight::cli::main());
}
