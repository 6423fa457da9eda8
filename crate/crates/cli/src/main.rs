fn main() {
    std::process::exit(blur_cli::cli_run(std::env::args_os()));
}
