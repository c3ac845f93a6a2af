fn main() {
    std::process::exit(hvm::cli::run());
}
