fn main() {
    std::process::exit(flowreg_cli::run_from_args(std::env::args_os()));
}
