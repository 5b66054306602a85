fn main() {
    std::process::exit(opencam::cli::run());
}
