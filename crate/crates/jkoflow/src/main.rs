fn main() {
    std::process::exit(jkoflow::cli::main());
}
