fn main() {
    std::process::exit(goxn_core::cli::main_with(std::env::args_os()));
}
