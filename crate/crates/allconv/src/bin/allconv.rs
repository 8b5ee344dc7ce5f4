fn main() {
    std::process::exit(allconv::cli::dispatch(std::env::args().skip(1)));
}
