fn main() {
    std::process::exit(cardsort::cli::main());
}
