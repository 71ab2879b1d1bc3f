fn main() {
    std::process::exit(sublab::cli::main());
}
