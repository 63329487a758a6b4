fn main() {
    std::process::exit(countcluster::cli::main());
}
