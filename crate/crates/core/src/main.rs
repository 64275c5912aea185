fn main() {
    std::process::exit(qsd_lab::cli::main_with_args(std::env::args_os()));
}
