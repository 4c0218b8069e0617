fn main() {
    std::process::exit(anchor_bnn::cli::run());
}
