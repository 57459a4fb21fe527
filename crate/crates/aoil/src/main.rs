fn main() {
    std::process::exit(aoil::cli::cli_main());
}
