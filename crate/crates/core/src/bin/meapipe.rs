fn main() {
    std::process::exit(meapipe::cli::main_entry(std::env::args_os()));
}
