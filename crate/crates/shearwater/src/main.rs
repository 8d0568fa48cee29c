fn main() {
    std::process::exit(shearwater::cli::main());
}
