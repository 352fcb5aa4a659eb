fn main() {
    std::process::exit(softmask::cli::run());
}
