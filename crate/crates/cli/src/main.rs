fn main() {
    std::process::exit(pointwise_ocp_cli::main_with_args(std::env::args_os()));
}
