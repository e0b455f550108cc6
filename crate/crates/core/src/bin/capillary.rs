fn main() {
    std::process::exit(capillary::io_cli::run_command(std::env::args_os()));
}
