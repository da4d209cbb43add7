fn main() {
    std::process::exit(servoscope::cli::run_command(std::env::args_os()));
}
