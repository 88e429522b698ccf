fn main() {
    std::process::exit(asv_inekf::cli::run_cli(std::env::args_os()));
}
