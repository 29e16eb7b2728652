fn main() {
    std::process::exit(fourier_cli::main_with(std::env::args_os()));
}
