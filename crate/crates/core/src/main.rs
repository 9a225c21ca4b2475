fn main() {
    std::process::exit(spectrum_market::cli::dispatch(std::env::args_os()));
}
