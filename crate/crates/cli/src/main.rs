fn main() {
    std::process::exit(invdp_cli::run());
}
