fn main() {
    std::process::exit(tdv::cli::cli_main(std::env::args_os()));
}
