fn main() {
    std::process::exit(herit::cli::main_with(std::env::args_os()));
}
