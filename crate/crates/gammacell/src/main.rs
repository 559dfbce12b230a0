fn main() {
    std::process::exit(gammacell::cli::main_with(std::env::args_os()));
}
