fn main() {
    std::process::exit(veil_core::cli::cli_main(std::env::args_os()));
}
