fn main() {
    std::process::exit(qpdl::cli::main_with_args(std::env::args_os()));
}
