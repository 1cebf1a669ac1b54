fn main() {
    std::process::exit(deflicker::cli::run());
}
