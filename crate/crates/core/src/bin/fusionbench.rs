fn main() {
    std::process::exit(fusionbench::cli::main_with_args(std::env::args_os()));
}
