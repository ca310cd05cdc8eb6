fn main() {
    std::process::exit(nlcal::cli::main_with(std::env::args_os()));
}
