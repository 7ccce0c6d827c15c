fn main() {
    std::process::exit(relu_mpc::cli::main_with_args(std::env::args_os()));
}
