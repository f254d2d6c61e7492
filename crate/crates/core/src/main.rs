fn main() {
    std::process::exit(shapeflow::cli::main_with_args(std::env::args_os()));
}
