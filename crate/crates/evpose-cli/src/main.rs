fn main() {
    std::process::exit(evpose_cli::run());
}
