fn main() {
    std::process::exit(crackle::cli::main_with(std::env::args_os()));
}
