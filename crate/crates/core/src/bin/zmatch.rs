fn main() {
    std::process::exit(zernike_match::cli::run(std::env::args_os()));
}
