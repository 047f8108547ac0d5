fn main() {
    std::process::exit(disclosure_sim::cli::main());
}
